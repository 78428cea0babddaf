#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "litevla/action_grammar.hpp"
#include "litevla/image.hpp"
#include "litevla/policy.hpp"
#include "litevla/sim.hpp"

namespace litevla {

struct ActionChunk {
    VelocityCommand command;
    std::string action;  // source action string, empty for teleop chunks
    double issued_at = 0.0;
    double expires_at = 0.0;
    std::uint64_t seq = 0;
    bool preempts = false;  // replaces the executing chunk even in FIFO mode
};

enum class PopStatus { Popped, Empty, Busy };

// Bounded FIFO shared by one producer and one consumer. A push onto a full
// queue evicts the oldest chunk. The consumer side never blocks.
class ChunkQueue {
public:
    explicit ChunkQueue(std::size_t capacity = 4);

    // Returns true when an older chunk had to be dropped.
    bool push(const ActionChunk& c);
    PopStatus try_pop(ActionChunk& out);
    // Pops only when the front chunk is marked `preempts`.
    PopStatus try_pop_preempting(ActionChunk& out);
    // Clears the queue and leaves only `c` (teleop override).
    void replace(const ActionChunk& c);
    void clear();

    std::size_t size() const;
    std::size_t capacity() const { return capacity_; }
    std::uint64_t dropped() const;

private:
    std::size_t capacity_;
    mutable std::mutex mu_;
    std::deque<ActionChunk> items_;
    std::uint64_t dropped_ = 0;
};

struct Emission {
    double t = 0.0;
    double linear = 0.0;
    double angular = 0.0;
    std::optional<std::uint64_t> seq;  // chunk that produced it; empty for a safety stop
};

// Fixed-rate consumer. Emits the active chunk until it expires, then the next
// unexpired one, otherwise exactly (0, 0).
class Controller {
public:
    explicit Controller(ChunkQueue& queue, bool preempt = false) : queue_(queue), preempt_(preempt) {}

    Emission step(double t);
    void reset() { current_.reset(); }

    std::uint64_t expired_unexecuted() const { return expired_unexecuted_; }

private:
    ChunkQueue& queue_;
    bool preempt_;
    std::optional<ActionChunk> current_;
    std::uint64_t expired_unexecuted_ = 0;
};

class LatencyStats {
public:
    void add(double seconds);
    std::size_t count() const { return samples_.size(); }
    const std::vector<double>& samples() const { return samples_; }
    double mean() const;
    double p50() const;
    double p95() const;
    double rate_hz() const { return 1.0 / mean(); }
    nlohmann::json to_json() const;

private:
    double quantile(double q) const;
    std::vector<double> samples_;
};

// Maps a camera frame to an action string. The true state is passed for
// scripted reasoners; learned policies ignore it.
using Reasoner = std::function<std::string(const SceneImage&, const RobotState&)>;
// Virtual-time latency for the n-th query; empty means measured wall time.
using LatencyModel = std::function<double(std::size_t)>;

struct RuntimeConfig {
    double control_hz = 20.0;
    std::size_t queue_capacity = 4;
    bool preempt = false;
    double reasoning_period = 3.0;  // minimum spacing between query starts, s
    double success_radius = 0.4;
    SafetyCaps caps;
    CameraConfig camera{64, 64};

    nlohmann::json to_json() const;
    static RuntimeConfig from_json(const nlohmann::json& j);
};

struct ReasoningOutcome {
    std::optional<ActionChunk> chunk;
    double latency = 0.0;
    std::string error;
};

// Frame -> action string -> parse -> velocity -> chunk issued at now + latency.
// Any failure yields no chunk and a message.
ReasoningOutcome reasoning_step(const SceneImage& frame, const RobotState& state, const Reasoner& reasoner, double now,
                                std::optional<double> injected_latency, std::uint64_t seq, const SafetyCaps& caps);

struct InferenceEvent {
    double t = 0.0;  // completion time
    std::string action;
    double latency = 0.0;
    std::size_t queue_depth = 0;
    std::uint64_t seq = 0;
};

struct EpisodeResult {
    std::vector<RobotState> trajectory;  // state after each control tick
    std::vector<Emission> emissions;
    std::vector<InferenceEvent> inferences;
    LatencyStats latency;
    std::size_t queries_started = 0;
    std::size_t errors = 0;
    std::uint64_t queue_drops = 0;
    bool success = false;
    double elapsed = 0.0;
};

struct EpisodeOptions {
    double duration = 120.0;
    bool stop_on_success = true;
    LatencyModel latency;
};

// Discrete-event closed loop in virtual time: ticks at k / control_hz,
// reasoning queries back-to-back no faster than reasoning_period.
EpisodeResult run_episode(const WorldSpec& world, const RobotState& start, const Reasoner& reasoner,
                          const RuntimeConfig& cfg, const EpisodeOptions& opts);

// Acts on true geometry instead of pixels, using the given action table.
Reasoner expert_reasoner(const WorldSpec& world, const std::map<Verb, ActionSpec>& table,
                         const ExpertConfig& expert = {});

// Resizes and normalises the frame, runs the policy and decodes the argmax.
Reasoner policy_reasoner(std::shared_ptr<const Policy> policy);

enum class RuntimeMode { Idle, Teleop, Policy };
const char* mode_name(RuntimeMode m);
std::optional<RuntimeMode> mode_from_name(const std::string& s);

struct RuntimeSnapshot {
    double t = 0.0;
    std::uint64_t tick = 0;
    RobotState state;
    RuntimeMode mode = RuntimeMode::Idle;
    std::size_t queue_depth = 0;
    Emission last_emission;
};

struct TeleopCommandRecord {
    double t = 0.0;
    double linear = 0.0;
    double angular = 0.0;
};

// Wall-clock runtime: a control thread at control_hz and a reasoning thread,
// sharing only the ChunkQueue and a state mailbox.
class LiveRuntime {
public:
    LiveRuntime(WorldSpec world, RobotState start, RuntimeConfig cfg, Reasoner reasoner,
                std::optional<double> injected_latency = std::nullopt);
    ~LiveRuntime();
    LiveRuntime(const LiveRuntime&) = delete;
    LiveRuntime& operator=(const LiveRuntime&) = delete;

    void start();
    void stop();

    void set_mode(RuntimeMode m);
    RuntimeMode mode() const { return mode_.load(); }
    // Replaces any queued chunk. Values outside the safety caps are rejected.
    void teleop(double linear, double angular, double hold = 0.25);

    RuntimeSnapshot snapshot() const;
    const WorldSpec& world() const { return world_; }
    std::vector<Emission> emissions() const;
    std::vector<TeleopCommandRecord> teleop_log() const;
    std::optional<InferenceEvent> take_inference();
    LatencyStats latency() const;

private:
    double now() const;
    void control_loop();
    void reasoning_loop();

    WorldSpec world_;
    RuntimeConfig cfg_;
    Reasoner reasoner_;
    std::optional<double> injected_latency_;
    ChunkQueue queue_;
    Controller controller_;
    std::atomic<RuntimeMode> mode_{RuntimeMode::Idle};
    std::atomic<bool> running_{false};
    std::atomic<std::uint64_t> seq_{0};
    std::chrono::steady_clock::time_point t0_;

    mutable std::mutex state_mu_;
    RuntimeSnapshot snap_;
    std::vector<Emission> emissions_;
    std::vector<TeleopCommandRecord> teleop_log_;
    std::deque<InferenceEvent> inferences_;
    LatencyStats latency_;

    std::mutex wake_mu_;
    std::condition_variable wake_;
    std::thread control_thread_, reasoning_thread_;
};

}  // namespace litevla
