#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "json.hpp"
#include "litevla/action_grammar.hpp"
#include "litevla/image.hpp"

namespace litevla {

class Rng;

struct RobotState {
    double x = 0.0;
    double y = 0.0;
    double theta = 0.0;  // wrapped to (-pi, pi]
    double v = 0.0;
    double omega = 0.0;

    bool operator==(const RobotState&) const = default;
};

using Color = std::array<float, 3>;

struct Cylinder {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.1;
    double height = 0.3;
    Color color{0.85f, 0.1f, 0.1f};

    bool operator==(const Cylinder&) const = default;
};

struct WorldSpec {
    double x_min = -2.0, x_max = 2.0;
    double y_min = -2.0, y_max = 2.0;
    Cylinder goal;
    std::vector<Cylinder> obstacles;
    Color wall_color{0.55f, 0.6f, 0.7f};
    Color floor_color{0.3f, 0.28f, 0.25f};

    // Throws std::invalid_argument if the goal lies outside the arena.
    void validate() const;
    bool operator==(const WorldSpec&) const = default;
};

struct CameraConfig {
    std::size_t width = 32;
    std::size_t height = 32;
    double mount_height = 0.2;  // metres above the floor
    double near_clip = 0.02;
};

double wrap_angle(double a);

// Semi-implicit Euler unicycle step. Leaving the arena or touching an obstacle
// clamps the pose and zeroes the velocities.
RobotState simulate_step(const RobotState& s, double linear, double angular, double dt, const WorldSpec& world);

// 90 degree horizontal field of view pinhole camera. Upper half is wall, lower
// half floor; cylinders are drawn far-to-near with area-coverage edges.
SceneImage render_scene(const RobotState& s, const WorldSpec& world, const CameraConfig& cam = {});

// Reflection across the x axis. Rendering a mirrored state in the mirrored
// world gives the horizontally flipped image.
RobotState mirror_state(const RobotState& s);
WorldSpec mirror_world(const WorldSpec& w);

double distance_to_goal(const RobotState& s, const WorldSpec& w);
// Positive when the goal is to the robot's left.
double bearing_to_goal(const RobotState& s, const WorldSpec& w);

struct ExpertConfig {
    double backward_distance = 0.2;
    double stop_distance = 0.4;
    double bearing_threshold = 0.2;
};

// Scripted teleoperator: back off when too close, stop in range, turn toward
// the goal, otherwise drive.
Verb expert_verb(const RobotState& s, const WorldSpec& w, const ExpertConfig& cfg = {});

WorldSpec random_world(Rng& rng);

// Samples a pose whose expert label is `verb`, keeping the goal in view and a
// margin away from the label boundaries.
RobotState sample_state_for(Verb verb, const WorldSpec& w, Rng& rng, const ExpertConfig& cfg = {});

// Start pose with the goal between `min_d` and `max_d` away and within
// `max_bearing` of the heading.
RobotState random_start(const WorldSpec& w, Rng& rng, double min_d = 1.0, double max_d = 2.5,
                        double max_bearing = 0.6);

nlohmann::json world_to_json(const WorldSpec& w);
WorldSpec world_from_json(const nlohmann::json& j);

}  // namespace litevla
