#include "litevla/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "litevla/rng.hpp"

namespace litevla {

namespace {

constexpr double kPi = std::numbers::pi;

double overlap(double a0, double a1, double b0, double b1) {
    const double hi = std::min(a1, b1);
    const double lo = std::max(a0, b0);
    return hi > lo ? hi - lo : 0.0;
}

bool touches(const Cylinder& c, double x, double y, double robot_radius) {
    const double dx = x - c.x, dy = y - c.y;
    const double r = c.radius + robot_radius;
    return dx * dx + dy * dy < r * r;
}

constexpr double kRobotRadius = 0.05;

}  // namespace

void WorldSpec::validate() const {
    if (!(x_min < x_max && y_min < y_max)) throw std::invalid_argument("arena bounds are empty");
    if (goal.x < x_min || goal.x > x_max || goal.y < y_min || goal.y > y_max) {
        throw std::invalid_argument("goal marker lies outside the arena");
    }
    if (!(goal.radius > 0.0 && goal.height > 0.0)) throw std::invalid_argument("goal marker must have positive size");
}

double wrap_angle(double a) {
    if (a > -kPi && a <= kPi) return a;
    a = std::remainder(a, 2.0 * kPi);
    if (a <= -kPi) a += 2.0 * kPi;
    return a;
}

RobotState simulate_step(const RobotState& s, double linear, double angular, double dt, const WorldSpec& world) {
    if (dt < 0.0) throw std::invalid_argument("simulation step must be non-negative");
    RobotState n = s;
    n.v = linear;
    n.omega = angular;
    if (dt == 0.0) return n;
    n.theta = wrap_angle(s.theta + angular * dt);
    const double nx = s.x + linear * std::cos(n.theta) * dt;
    const double ny = s.y + linear * std::sin(n.theta) * dt;
    n.x = std::clamp(nx, world.x_min, world.x_max);
    n.y = std::clamp(ny, world.y_min, world.y_max);
    bool contact = n.x != nx || n.y != ny;
    for (const auto& o : world.obstacles) {
        if (touches(o, n.x, n.y, kRobotRadius)) {
            n.x = s.x;
            n.y = s.y;
            contact = true;
            break;
        }
    }
    if (contact) {
        n.v = 0.0;
        n.omega = 0.0;
    }
    return n;
}

SceneImage render_scene(const RobotState& s, const WorldSpec& world, const CameraConfig& cam) {
    const std::size_t W = cam.width, H = cam.height;
    SceneImage img(H, W);
    for (std::size_t y = 0; y < H; ++y) {
        const Color& c = 2 * y < H ? world.wall_color : world.floor_color;
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[ch];
        }
    }

    struct Projected {
        double lx, ly;
        const Cylinder* cyl;
    };
    std::vector<Projected> visible;
    const double ct = std::cos(s.theta), st = std::sin(s.theta);
    auto project = [&](const Cylinder& c) {
        const double dx = c.x - s.x, dy = c.y - s.y;
        const double lx = ct * dx + st * dy;
        const double ly = -st * dx + ct * dy;
        if (lx > cam.near_clip) visible.push_back({lx, ly, &c});
    };
    project(world.goal);
    for (const auto& o : world.obstacles) project(o);
    std::stable_sort(visible.begin(), visible.end(),
                     [](const Projected& a, const Projected& b) { return a.lx > b.lx; });

    // Image coordinates are measured from the optical centre so that mirrored
    // scenes produce exactly mirrored coverage values.
    const double f = static_cast<double>(W) / 2.0;
    const double half_w = static_cast<double>(W) / 2.0;
    const double half_h = static_cast<double>(H) / 2.0;
    std::vector<double> col_cov(W);
    for (const auto& p : visible) {
        const double centre = -f * p.ly / p.lx;
        const double hw = f * p.cyl->radius / p.lx;
        const double top = -f * (p.cyl->height - cam.mount_height) / p.lx;
        const double bottom = f * cam.mount_height / p.lx;
        bool any = false;
        for (std::size_t x = 0; x < W; ++x) {
            const double u = static_cast<double>(x) - half_w;
            col_cov[x] = overlap(u, u + 1.0, centre - hw, centre + hw);
            any |= col_cov[x] > 0.0;
        }
        if (!any) continue;
        for (std::size_t y = 0; y < H; ++y) {
            const double v = static_cast<double>(y) - half_h;
            const double rc = overlap(v, v + 1.0, top, bottom);
            if (rc <= 0.0) continue;
            for (std::size_t x = 0; x < W; ++x) {
                const float a = static_cast<float>(rc * col_cov[x]);
                if (a <= 0.0f) continue;
                for (std::size_t ch = 0; ch < 3; ++ch) {
                    float& px = img.at(y, x, ch);
                    px = px * (1.0f - a) + p.cyl->color[ch] * a;
                }
            }
        }
    }
    return img;
}

RobotState mirror_state(const RobotState& s) {
    RobotState m = s;
    m.y = -s.y;
    m.theta = s.theta == kPi ? kPi : -s.theta;
    m.omega = -s.omega;
    return m;
}

WorldSpec mirror_world(const WorldSpec& w) {
    WorldSpec m = w;
    m.y_min = -w.y_max;
    m.y_max = -w.y_min;
    m.goal.y = -w.goal.y;
    for (auto& o : m.obstacles) o.y = -o.y;
    return m;
}

double distance_to_goal(const RobotState& s, const WorldSpec& w) { return std::hypot(w.goal.x - s.x, w.goal.y - s.y); }

double bearing_to_goal(const RobotState& s, const WorldSpec& w) {
    const double dx = w.goal.x - s.x, dy = w.goal.y - s.y;
    const double ct = std::cos(s.theta), st = std::sin(s.theta);
    return std::atan2(-st * dx + ct * dy, ct * dx + st * dy);
}

Verb expert_verb(const RobotState& s, const WorldSpec& w, const ExpertConfig& cfg) {
    const double d = distance_to_goal(s, w);
    if (d < cfg.backward_distance) return Verb::Backward;
    if (d < cfg.stop_distance) return Verb::Stop;
    const double b = bearing_to_goal(s, w);
    if (b > cfg.bearing_threshold) return Verb::TurnLeft;
    if (b < -cfg.bearing_threshold) return Verb::TurnRight;
    return Verb::Forward;
}

WorldSpec random_world(Rng& rng) {
    WorldSpec w;
    w.goal.x = rng.uniform(-1.5, 1.5);
    w.goal.y = rng.uniform(-1.5, 1.5);
    auto jitter = [&](Color& c) {
        for (auto& ch : c) ch = std::clamp(ch + static_cast<float>(rng.uniform(-0.08, 0.08)), 0.0f, 1.0f);
    };
    jitter(w.wall_color);
    jitter(w.floor_color);
    return w;
}

RobotState sample_state_for(Verb verb, const WorldSpec& w, Rng& rng, const ExpertConfig& cfg) {
    const double view = 0.6;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        double d = 0.0, b = 0.0;
        switch (verb) {
            case Verb::Backward:
                d = rng.uniform(0.13, cfg.backward_distance - 0.02);
                b = rng.uniform(-view, view);
                break;
            case Verb::Stop:
                d = rng.uniform(cfg.backward_distance + 0.02, cfg.stop_distance - 0.03);
                b = rng.uniform(-view, view);
                break;
            case Verb::Forward:
                d = rng.uniform(cfg.stop_distance + 0.05, 2.5);
                b = rng.uniform(-cfg.bearing_threshold + 0.05, cfg.bearing_threshold - 0.05);
                break;
            case Verb::TurnLeft:
            case Verb::TurnRight:
                d = rng.uniform(cfg.stop_distance + 0.05, 2.5);
                b = rng.uniform(cfg.bearing_threshold + 0.05, view);
                if (verb == Verb::TurnRight) b = -b;
                break;
        }
        const double theta = rng.uniform(-kPi, kPi);
        // The goal sits at bearing b from the heading, so the robot is behind it.
        const double dir = theta + b;
        RobotState s;
        s.theta = wrap_angle(theta);
        s.x = w.goal.x - d * std::cos(dir);
        s.y = w.goal.y - d * std::sin(dir);
        if (s.x < w.x_min || s.x > w.x_max || s.y < w.y_min || s.y > w.y_max) continue;
        if (expert_verb(s, w, cfg) != verb) continue;
        return s;
    }
    throw std::runtime_error("could not place the robot for class " + std::string(verb_name(verb)));
}

RobotState random_start(const WorldSpec& w, Rng& rng, double min_d, double max_d, double max_bearing) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const double d = rng.uniform(min_d, max_d);
        const double b = rng.uniform(-max_bearing, max_bearing);
        const double theta = rng.uniform(-kPi, kPi);
        RobotState s;
        s.theta = wrap_angle(theta);
        s.x = w.goal.x - d * std::cos(theta + b);
        s.y = w.goal.y - d * std::sin(theta + b);
        if (s.x >= w.x_min && s.x <= w.x_max && s.y >= w.y_min && s.y <= w.y_max) return s;
    }
    throw std::runtime_error("could not place a start pose in the arena");
}

namespace {

nlohmann::json cyl_json(const Cylinder& c) {
    return {{"x", c.x}, {"y", c.y}, {"radius", c.radius}, {"height", c.height}, {"color", c.color}};
}

Cylinder cyl_from(const nlohmann::json& j) {
    Cylinder c;
    c.x = j.at("x").get<double>();
    c.y = j.at("y").get<double>();
    c.radius = j.value("radius", c.radius);
    c.height = j.value("height", c.height);
    if (j.contains("color")) c.color = j.at("color").get<Color>();
    return c;
}

}  // namespace

nlohmann::json world_to_json(const WorldSpec& w) {
    nlohmann::json j;
    j["bounds"] = {w.x_min, w.x_max, w.y_min, w.y_max};
    j["goal"] = cyl_json(w.goal);
    j["obstacles"] = nlohmann::json::array();
    for (const auto& o : w.obstacles) j["obstacles"].push_back(cyl_json(o));
    j["wall_color"] = w.wall_color;
    j["floor_color"] = w.floor_color;
    return j;
}

WorldSpec world_from_json(const nlohmann::json& j) {
    WorldSpec w;
    if (j.contains("bounds")) {
        const auto b = j.at("bounds").get<std::array<double, 4>>();
        w.x_min = b[0];
        w.x_max = b[1];
        w.y_min = b[2];
        w.y_max = b[3];
    }
    if (j.contains("goal")) w.goal = cyl_from(j.at("goal"));
    if (j.contains("obstacles")) {
        for (const auto& o : j.at("obstacles")) w.obstacles.push_back(cyl_from(o));
    }
    if (j.contains("wall_color")) w.wall_color = j.at("wall_color").get<Color>();
    if (j.contains("floor_color")) w.floor_color = j.at("floor_color").get<Color>();
    w.validate();
    return w;
}

}  // namespace litevla
