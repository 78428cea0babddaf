#include "litevla/runtime.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace litevla {

using nlohmann::json;

ChunkQueue::ChunkQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("chunk queue capacity must be positive");
}

bool ChunkQueue::push(const ActionChunk& c) {
    std::lock_guard lk(mu_);
    bool dropped = false;
    if (items_.size() == capacity_) {
        items_.pop_front();
        ++dropped_;
        dropped = true;
    }
    items_.push_back(c);
    return dropped;
}

PopStatus ChunkQueue::try_pop(ActionChunk& out) {
    std::unique_lock lk(mu_, std::try_to_lock);
    if (!lk.owns_lock()) return PopStatus::Busy;
    if (items_.empty()) return PopStatus::Empty;
    out = std::move(items_.front());
    items_.pop_front();
    return PopStatus::Popped;
}

PopStatus ChunkQueue::try_pop_preempting(ActionChunk& out) {
    std::unique_lock lk(mu_, std::try_to_lock);
    if (!lk.owns_lock()) return PopStatus::Busy;
    if (items_.empty() || !items_.front().preempts) return PopStatus::Empty;
    out = std::move(items_.front());
    items_.pop_front();
    return PopStatus::Popped;
}

void ChunkQueue::replace(const ActionChunk& c) {
    std::lock_guard lk(mu_);
    items_.clear();
    items_.push_back(c);
}

void ChunkQueue::clear() {
    std::lock_guard lk(mu_);
    items_.clear();
}

std::size_t ChunkQueue::size() const {
    std::lock_guard lk(mu_);
    return items_.size();
}

std::uint64_t ChunkQueue::dropped() const {
    std::lock_guard lk(mu_);
    return dropped_;
}

Emission Controller::step(double t) {
    if (current_ && t >= current_->expires_at) current_.reset();
    ActionChunk c;
    while (true) {
        PopStatus st;
        if (current_ && !preempt_) {
            st = queue_.try_pop_preempting(c);
        } else {
            st = queue_.try_pop(c);
        }
        if (st != PopStatus::Popped) break;
        if (t >= c.expires_at) {
            ++expired_unexecuted_;
            continue;
        }
        current_ = std::move(c);
    }
    Emission e;
    e.t = t;
    if (current_) {
        e.linear = current_->command.linear;
        e.angular = current_->command.angular;
        e.seq = current_->seq;
    }
    return e;
}

void LatencyStats::add(double seconds) {
    if (!(seconds >= 0.0) || !std::isfinite(seconds)) throw std::invalid_argument("latency must be finite and >= 0");
    samples_.push_back(seconds);
}

double LatencyStats::mean() const {
    if (samples_.empty()) throw std::logic_error("no latency samples");
    return std::accumulate(samples_.begin(), samples_.end(), 0.0) / static_cast<double>(samples_.size());
}

double LatencyStats::quantile(double q) const {
    if (samples_.empty()) throw std::logic_error("no latency samples");
    std::vector<double> s = samples_;
    std::sort(s.begin(), s.end());
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (s[hi] - s[lo]) * (pos - static_cast<double>(lo));
}

double LatencyStats::p50() const { return quantile(0.5); }
double LatencyStats::p95() const { return quantile(0.95); }

json LatencyStats::to_json() const {
    json j{{"count", count()}};
    if (!samples_.empty()) {
        j["mean_s"] = mean();
        j["p50_s"] = p50();
        j["p95_s"] = p95();
        j["rate_hz"] = rate_hz();
    }
    return j;
}

json RuntimeConfig::to_json() const {
    return {{"control_hz", control_hz},
            {"queue_capacity", queue_capacity},
            {"preempt", preempt},
            {"reasoning_period", reasoning_period},
            {"success_radius", success_radius},
            {"max_linear", caps.max_linear},
            {"max_angular", caps.max_angular}};
}

RuntimeConfig RuntimeConfig::from_json(const json& j) {
    RuntimeConfig c;
    c.control_hz = j.value("control_hz", c.control_hz);
    c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
    c.preempt = j.value("preempt", c.preempt);
    c.reasoning_period = j.value("reasoning_period", c.reasoning_period);
    c.success_radius = j.value("success_radius", c.success_radius);
    c.caps.max_linear = j.value("max_linear", c.caps.max_linear);
    c.caps.max_angular = j.value("max_angular", c.caps.max_angular);
    if (!(c.control_hz > 0.0)) throw std::invalid_argument("control_hz must be positive");
    if (c.queue_capacity == 0) throw std::invalid_argument("queue_capacity must be positive");
    if (c.reasoning_period < 0.0) throw std::invalid_argument("reasoning_period must be non-negative");
    return c;
}

namespace {

ActionChunk make_chunk(const std::string& action, double issued_at, std::uint64_t seq, const SafetyCaps& caps) {
    const ActionCommand cmd = parse_action(action);
    ActionChunk c;
    c.command = to_velocity(cmd, caps);
    c.action = action;
    c.issued_at = issued_at;
    c.expires_at = issued_at + c.command.duration;
    c.seq = seq;
    return c;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ReasoningOutcome reasoning_step(const SceneImage& frame, const RobotState& state, const Reasoner& reasoner,
                                double now, std::optional<double> injected_latency, std::uint64_t seq,
                                const SafetyCaps& caps) {
    ReasoningOutcome out;
    const auto w0 = std::chrono::steady_clock::now();
    std::string action;
    try {
        action = reasoner(frame, state);
    } catch (const std::exception& e) {
        out.error = std::string("policy failed: ") + e.what();
    }
    out.latency = injected_latency.value_or(seconds_since(w0));
    if (!out.error.empty()) return out;
    try {
        out.chunk = make_chunk(action, now + out.latency, seq, caps);
    } catch (const std::exception& e) {
        out.error = "rejected action '" + action + "': " + e.what();
    }
    return out;
}

EpisodeResult run_episode(const WorldSpec& world, const RobotState& start, const Reasoner& reasoner,
                          const RuntimeConfig& cfg, const EpisodeOptions& opts) {
    world.validate();
    EpisodeResult r;
    ChunkQueue queue(cfg.queue_capacity);
    Controller controller(queue, cfg.preempt);
    const double dt = 1.0 / cfg.control_hz;
    const auto ticks = static_cast<std::uint64_t>(std::floor(opts.duration * cfg.control_hz + 1e-9));

    RobotState state = start;
    double next_start = 0.0;
    struct Pending {
        double at;
        ReasoningOutcome outcome;
    };
    std::optional<Pending> pending;
    std::uint64_t seq = 0;

    for (std::uint64_t k = 0; k < ticks; ++k) {
        const double t = static_cast<double>(k) / cfg.control_hz;
        while (true) {
            if (pending) {
                if (pending->at > t) break;
                if (pending->outcome.chunk) {
                    ActionChunk& c = *pending->outcome.chunk;
                    if (queue.push(c)) ++r.queue_drops;
                    r.latency.add(pending->outcome.latency);
                    r.inferences.push_back({pending->at, c.action, pending->outcome.latency, queue.size(), c.seq});
                } else {
                    ++r.errors;
                }
                pending.reset();
                continue;
            }
            if (next_start > t) break;
            const double s = next_start;
            std::optional<double> injected;
            if (opts.latency) injected = opts.latency(r.queries_started);
            const SceneImage frame = render_scene(state, world, cfg.camera);
            ReasoningOutcome out = reasoning_step(frame, state, reasoner, s, injected, ++seq, cfg.caps);
            ++r.queries_started;
            const double done = s + out.latency;
            next_start = std::max(done, s + cfg.reasoning_period);
            pending = Pending{done, std::move(out)};
        }

        const Emission e = controller.step(t);
        r.emissions.push_back(e);
        state = simulate_step(state, e.linear, e.angular, dt, world);
        r.trajectory.push_back(state);
        r.elapsed = static_cast<double>(k + 1) / cfg.control_hz;
        if (distance_to_goal(state, world) <= cfg.success_radius) {
            r.success = true;
            if (opts.stop_on_success) break;
        }
    }
    return r;
}

Reasoner expert_reasoner(const WorldSpec& world, const std::map<Verb, ActionSpec>& table, const ExpertConfig& expert) {
    return [world, table, expert](const SceneImage&, const RobotState& s) {
        const Verb v = expert_verb(s, world, expert);
        const ActionSpec& spec = table.at(v);
        return serialize_action({v, v == Verb::Stop ? 0.0 : spec.magnitude, spec.duration.value_or(3.0)});
    };
}

Reasoner policy_reasoner(std::shared_ptr<const Policy> policy) {
    if (!policy) throw std::invalid_argument("policy_reasoner needs a policy");
    return [policy](const SceneImage& frame, const RobotState&) {
        return decode_action(policy->act(frame), policy->config());
    };
}

const char* mode_name(RuntimeMode m) {
    switch (m) {
        case RuntimeMode::Idle: return "idle";
        case RuntimeMode::Teleop: return "teleop";
        case RuntimeMode::Policy: return "policy";
    }
    return "idle";
}

std::optional<RuntimeMode> mode_from_name(const std::string& s) {
    if (s == "idle") return RuntimeMode::Idle;
    if (s == "teleop") return RuntimeMode::Teleop;
    if (s == "policy") return RuntimeMode::Policy;
    return std::nullopt;
}

LiveRuntime::LiveRuntime(WorldSpec world, RobotState start, RuntimeConfig cfg, Reasoner reasoner,
                         std::optional<double> injected_latency)
    : world_(std::move(world)),
      cfg_(cfg),
      reasoner_(std::move(reasoner)),
      injected_latency_(injected_latency),
      queue_(cfg.queue_capacity),
      controller_(queue_, cfg.preempt) {
    world_.validate();
    snap_.state = start;
}

LiveRuntime::~LiveRuntime() { stop(); }

double LiveRuntime::now() const { return seconds_since(t0_); }

void LiveRuntime::start() {
    if (running_.exchange(true)) return;
    t0_ = std::chrono::steady_clock::now();
    control_thread_ = std::thread([this] { control_loop(); });
    reasoning_thread_ = std::thread([this] { reasoning_loop(); });
}

void LiveRuntime::stop() {
    if (!running_.exchange(false)) return;
    wake_.notify_all();
    if (control_thread_.joinable()) control_thread_.join();
    if (reasoning_thread_.joinable()) reasoning_thread_.join();
}

void LiveRuntime::set_mode(RuntimeMode m) {
    mode_.store(m);
    // A short preempting stop cancels whatever is executing.
    ActionChunk stop;
    stop.issued_at = running_ ? now() : 0.0;
    stop.expires_at = stop.issued_at + 1.0 / cfg_.control_hz;
    stop.seq = ++seq_;
    stop.preempts = true;
    queue_.replace(stop);
    wake_.notify_all();
}

void LiveRuntime::teleop(double linear, double angular, double hold) {
    if (!std::isfinite(linear) || !std::isfinite(angular)) throw SafetyError("teleop velocities must be finite");
    if (std::abs(linear) > cfg_.caps.max_linear || std::abs(angular) > cfg_.caps.max_angular) {
        throw SafetyError("teleop command exceeds the safety caps");
    }
    ActionChunk c;
    c.command = {linear, angular, hold};
    c.issued_at = running_ ? now() : 0.0;
    c.expires_at = c.issued_at + hold;
    c.seq = ++seq_;
    c.preempts = true;
    queue_.replace(c);
    std::lock_guard lk(state_mu_);
    teleop_log_.push_back({c.issued_at, linear, angular});
}

RuntimeSnapshot LiveRuntime::snapshot() const {
    std::lock_guard lk(state_mu_);
    RuntimeSnapshot s = snap_;
    s.mode = mode_.load();
    s.queue_depth = queue_.size();
    return s;
}

std::vector<Emission> LiveRuntime::emissions() const {
    std::lock_guard lk(state_mu_);
    return emissions_;
}

std::vector<TeleopCommandRecord> LiveRuntime::teleop_log() const {
    std::lock_guard lk(state_mu_);
    return teleop_log_;
}

std::optional<InferenceEvent> LiveRuntime::take_inference() {
    std::lock_guard lk(state_mu_);
    if (inferences_.empty()) return std::nullopt;
    InferenceEvent e = inferences_.front();
    inferences_.pop_front();
    return e;
}

LatencyStats LiveRuntime::latency() const {
    std::lock_guard lk(state_mu_);
    return latency_;
}

void LiveRuntime::control_loop() {
    const double period = 1.0 / cfg_.control_hz;
    std::uint64_t k = 0;
    while (running_) {
        const auto due = t0_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double>(static_cast<double>(k) * period));
        std::this_thread::sleep_until(due);
        if (!running_) break;
        const double t = now();
        const Emission e = controller_.step(t);
        RobotState next;
        {
            std::lock_guard lk(state_mu_);
            next = simulate_step(snap_.state, e.linear, e.angular, period, world_);
            snap_.state = next;
            snap_.t = t;
            snap_.tick = k;
            snap_.last_emission = e;
            emissions_.push_back(e);
        }
        // Skip ticks that are already in the past rather than bursting.
        const auto behind = static_cast<std::uint64_t>(std::floor(now() / period));
        k = std::max(k + 1, behind);
    }
}

void LiveRuntime::reasoning_loop() {
    while (running_) {
        if (mode_.load() != RuntimeMode::Policy) {
            std::unique_lock lk(wake_mu_);
            wake_.wait_for(lk, std::chrono::milliseconds(50));
            continue;
        }
        const double s = now();
        RobotState state;
        {
            std::lock_guard lk(state_mu_);
            state = snap_.state;
        }
        const SceneImage frame = render_scene(state, world_, cfg_.camera);
        ReasoningOutcome out = reasoning_step(frame, state, reasoner_, s, injected_latency_, 0, cfg_.caps);
        // Hold the result back until the injected latency has elapsed.
        {
            std::unique_lock lk(wake_mu_);
            wake_.wait_until(lk, t0_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                          std::chrono::duration<double>(s + out.latency)),
                             [this] { return !running_ || mode_.load() != RuntimeMode::Policy; });
        }
        if (!running_ || mode_.load() != RuntimeMode::Policy) continue;
        if (out.chunk) {
            ActionChunk c = *out.chunk;
            c.seq = ++seq_;
            c.issued_at = now();
            c.expires_at = c.issued_at + c.command.duration;
            queue_.push(c);
            std::lock_guard lk(state_mu_);
            latency_.add(out.latency);
            inferences_.push_back({c.issued_at, c.action, out.latency, queue_.size(), c.seq});
            if (inferences_.size() > 64) inferences_.pop_front();
        }
        std::unique_lock lk(wake_mu_);
        wake_.wait_until(lk, t0_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                      std::chrono::duration<double>(s + cfg_.reasoning_period)),
                         [this] { return !running_.load(); });
    }
}

}  // namespace litevla
