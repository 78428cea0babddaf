#include <numbers>

#include "doctest.h"
#include "litevla/rng.hpp"
#include "litevla/sim.hpp"

using namespace litevla;

namespace {

// Column centroid of goal-coloured pixels, relative to the image centre.
double marker_offset(const SceneImage& img, const Color& goal) {
    double sum = 0.0, weight = 0.0;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const bool hit = std::fabs(img.at(y, x, 0) - goal[0]) < 1e-6 && std::fabs(img.at(y, x, 1) - goal[1]) < 1e-6 &&
                             std::fabs(img.at(y, x, 2) - goal[2]) < 1e-6;
            if (hit) {
                sum += static_cast<double>(x) + 0.5;
                weight += 1.0;
            }
        }
    }
    REQUIRE(weight > 0.0);
    return sum / weight - static_cast<double>(img.width) / 2.0;
}

}  // namespace

TEST_CASE("unicycle kinematics") {
    const WorldSpec w;
    const RobotState s{0.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(simulate_step(s, 0.3, 0.2, 0.0, w).x == 0.0);
    CHECK(simulate_step(s, 0.3, 0.2, 0.0, w).theta == 0.0);
    const auto fwd = simulate_step(s, 1.0, 0.0, 1.0, w);
    CHECK(fwd.x == doctest::Approx(1.0));
    CHECK(fwd.y == doctest::Approx(0.0));
    const auto turn = simulate_step(s, 0.0, std::numbers::pi / 2, 1.0, w);
    CHECK(turn.theta == doctest::Approx(std::numbers::pi / 2));
    CHECK(turn.x == 0.0);
    CHECK(turn.y == 0.0);
    CHECK(wrap_angle(3 * std::numbers::pi) == doctest::Approx(std::numbers::pi));
    CHECK(wrap_angle(-std::numbers::pi) == doctest::Approx(std::numbers::pi));
}

TEST_CASE("arena walls and obstacles stop the robot") {
    WorldSpec w;
    const RobotState s{1.9, 0.0, 0.0, 0.0, 0.0};
    const auto out = simulate_step(s, 0.5, 0.0, 1.0, w);
    CHECK(out.x <= w.x_max);
    CHECK(out.v == 0.0);
    w.obstacles.push_back(Cylinder{0.5, 0.0, 0.2, 0.3, {0.1f, 0.1f, 0.9f}});
    const auto hit = simulate_step(RobotState{0.0, 0.0, 0.0, 0.0, 0.0}, 0.5, 0.0, 1.0, w);
    CHECK(hit.v == 0.0);
    CHECK(hit.x < 0.5);
}

TEST_CASE("rendering geometry") {
    WorldSpec w;
    w.goal.x = 1.0;
    w.goal.y = 0.0;
    const RobotState facing{0.0, 0.0, 0.0, 0.0, 0.0};
    const auto img = render_scene(facing, w, CameraConfig{64, 64});
    CHECK(std::fabs(marker_offset(img, w.goal.color)) < 1e-9);

    const RobotState left{0.0, 0.0, -std::numbers::pi / 6, 0.0, 0.0};
    CHECK(marker_offset(render_scene(left, w, CameraConfig{64, 64}), w.goal.color) < -5.0);
    const RobotState right{0.0, 0.0, std::numbers::pi / 6, 0.0, 0.0};
    CHECK(marker_offset(render_scene(right, w, CameraConfig{64, 64}), w.goal.color) > 5.0);

    // background: wall above the horizon, floor below
    const RobotState away{0.0, 0.0, std::numbers::pi, 0.0, 0.0};
    const auto bg = render_scene(away, w);
    CHECK(bg.at(0, 0, 0) == w.wall_color[0]);
    CHECK(bg.at(31, 0, 2) == w.floor_color[2]);
}

TEST_CASE("mirrored state renders the mirrored image bitwise") {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        WorldSpec w = random_world(rng);
        if (i % 2) w.obstacles.push_back(Cylinder{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), 0.15, 0.3, {0.2f, 0.3f, 0.8f}});
        const RobotState s = random_start(w, rng);
        for (const CameraConfig cam : {CameraConfig{32, 32}, CameraConfig{64, 64}}) {
            const auto a = flip_horizontal(render_scene(s, w, cam));
            const auto b = render_scene(mirror_state(s), mirror_world(w), cam);
            REQUIRE(a == b);
        }
    }
}

TEST_CASE("expert labels") {
    WorldSpec w;
    w.goal.x = 0.0;
    w.goal.y = 0.0;
    CHECK(expert_verb({-0.1, 0.0, 0.0, 0, 0}, w) == Verb::Backward);
    CHECK(expert_verb({-0.3, 0.0, 0.0, 0, 0}, w) == Verb::Stop);
    CHECK(expert_verb({-1.0, 0.0, 0.0, 0, 0}, w) == Verb::Forward);
    CHECK(expert_verb({-1.0, 0.0, -0.5, 0, 0}, w) == Verb::TurnLeft);
    CHECK(expert_verb({-1.0, 0.0, 0.5, 0, 0}, w) == Verb::TurnRight);
    CHECK(bearing_to_goal({-1.0, 0.0, -0.5, 0, 0}, w) == doctest::Approx(0.5));
    CHECK(distance_to_goal({-1.0, 0.0, 0.0, 0, 0}, w) == doctest::Approx(1.0));

    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
        const WorldSpec rw = random_world(rng);
        const Verb v = kAllVerbs[rng.below(5)];
        const RobotState s = sample_state_for(v, rw, rng);
        CHECK(expert_verb(s, rw) == v);
        CHECK(std::fabs(bearing_to_goal(s, rw)) <= 0.6 + 1e-12);
    }
}

TEST_CASE("world json round trip and validation") {
    Rng rng(3);
    WorldSpec w = random_world(rng);
    w.obstacles.push_back(Cylinder{0.3, -0.4, 0.2, 0.5, {0.1f, 0.2f, 0.3f}});
    CHECK(world_from_json(world_to_json(w)) == w);
    WorldSpec bad;
    bad.goal.x = 5.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK(world_from_json(nlohmann::json::object()) == WorldSpec{});
}

TEST_CASE("random starts respect the requested ranges") {
    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const WorldSpec w = random_world(rng);
        const RobotState s = random_start(w, rng);
        const double d = distance_to_goal(s, w);
        CHECK(d >= 1.0 - 1e-9);
        CHECK(d <= 2.5 + 1e-9);
        CHECK(std::fabs(bearing_to_goal(s, w)) <= 0.6 + 1e-9);
        CHECK(s.x >= w.x_min);
        CHECK(s.x <= w.x_max);
    }
}
