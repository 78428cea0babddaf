#include "litevla/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "litevla/rng.hpp"

namespace litevla {

std::map<Verb, std::size_t> reference_class_quotas(std::size_t total) {
    const std::map<Verb, double> ref{{Verb::Forward, 2990.0},  {Verb::TurnLeft, 2990.0}, {Verb::TurnRight, 2990.0},
                                     {Verb::Stop, 2990.0},     {Verb::Backward, 1152.0}};
    double sum = 0.0;
    for (const auto& [v, n] : ref) sum += n;
    std::map<Verb, std::size_t> out;
    std::size_t assigned = 0;
    for (const auto& [v, n] : ref) {
        out[v] = static_cast<std::size_t>(std::floor(n / sum * static_cast<double>(total)));
        assigned += out[v];
    }
    for (Verb v : {Verb::Forward, Verb::TurnLeft, Verb::TurnRight, Verb::Stop, Verb::Backward}) {
        if (assigned >= total) break;
        ++out[v];
        ++assigned;
    }
    return out;
}

ImageLoader TeleopSession::loader() const {
    return [this](const std::string& ref) {
        const auto it = frames.find(ref);
        if (it == frames.end()) throw ImageError("unknown frame '" + ref + "'");
        return it->second;
    };
}

void TeleopSession::write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir / "frames");
    for (const auto& [ref, img] : frames) write_png(dir / ref, img);
    CaptureLogWriter w(dir / "capture.ndjson");
    for (const auto& r : log) w.write(r);
}

TeleopSession generate_teleop_session(const TeleopSessionConfig& cfg) {
    if (cfg.command_jitter_ns * 2 >= cfg.frame_period_ns) {
        throw std::invalid_argument("command jitter must stay below half the frame period");
    }
    std::vector<Verb> plan;
    for (const auto& [v, n] : cfg.quotas) plan.insert(plan.end(), n, v);
    Rng rng(cfg.seed);
    rng.shuffle(std::span<Verb>(plan));

    TeleopSession session;
    const std::int64_t t0 = 1'700'000'000'000'000'000;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const WorldSpec world = random_world(rng);
        const RobotState state = sample_state_for(plan[i], world, rng, cfg.expert);
        const Verb verb = expert_verb(state, world, cfg.expert);

        char name[32];
        std::snprintf(name, sizeof name, "frames/%06zu.png", i);
        const std::int64_t ts = t0 + static_cast<std::int64_t>(i) * cfg.frame_period_ns;
        session.frames.emplace(name, render_scene(state, world, cfg.camera));
        session.expert_labels.push_back(verb);

        // Hand-driven commands are never perfectly clean.
        const double mag = cfg.action_table.at(verb).magnitude;
        double lin = rng.normal(0.0, 0.004), ang = rng.normal(0.0, 0.004);
        switch (verb) {
            case Verb::Forward: lin += mag; break;
            case Verb::Backward: lin -= mag; break;
            case Verb::TurnLeft: ang += mag; break;
            case Verb::TurnRight: ang -= mag; break;
            case Verb::Stop: break;
        }
        std::int64_t cmd_ts;
        if (rng.bernoulli(cfg.late_command_fraction)) {
            cmd_ts = ts + cfg.frame_period_ns * 3 / 4;
        } else {
            const auto j = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(2 * cfg.command_jitter_ns + 1)));
            cmd_ts = ts + j - cfg.command_jitter_ns;
        }
        CaptureRecord frame{ts, std::string(name), std::nullopt, std::nullopt};
        CaptureRecord cmd{cmd_ts, std::nullopt, lin, ang};
        if (cmd_ts < ts) {
            session.log.push_back(cmd);
            session.log.push_back(frame);
        } else {
            session.log.push_back(frame);
            session.log.push_back(cmd);
        }
    }
    return session;
}

}  // namespace litevla
