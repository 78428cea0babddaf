#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "litevla/data_pipeline.hpp"
#include "litevla/policy.hpp"
#include "litevla/sim.hpp"

namespace litevla {

struct TeleopSessionConfig {
    std::map<Verb, std::size_t> quotas;  // frames per expert class
    std::uint64_t seed = 0;
    std::int64_t frame_period_ns = 200'000'000;
    std::int64_t command_jitter_ns = 30'000'000;
    double late_command_fraction = 0.02;  // commands delayed past the sync tolerance
    CameraConfig camera{64, 64};
    ExpertConfig expert;
    std::map<Verb, ActionSpec> action_table = PolicyConfig{}.action_table;
};

// Class counts proportional to the reference corpus (four classes of about
// 2,990 and 1,152 backward samples), scaled to `total`.
std::map<Verb, std::size_t> reference_class_quotas(std::size_t total);

// In-memory scripted teleoperation: each frame shows a fresh random world and
// the operator's command follows within the jitter window.
struct TeleopSession {
    std::vector<CaptureRecord> log;
    std::map<std::string, SceneImage> frames;
    std::vector<Verb> expert_labels;  // per frame, in log order

    ImageLoader loader() const;
    // Writes frames as PNG under dir/frames and the log as dir/capture.ndjson.
    void write(const std::filesystem::path& dir) const;
};

TeleopSession generate_teleop_session(const TeleopSessionConfig& cfg);

}  // namespace litevla
