#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "litevla/bench.hpp"
#include "litevla/config.hpp"
#include "litevla/rng.hpp"
#include "litevla/synthetic.hpp"
#include "litevla/wire.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace litevla;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kMissingCheckpoint = 3, kConfigMismatch = 4 };

struct CliError : std::runtime_error {
    CliError(int code, std::string kind, const std::string& msg)
        : std::runtime_error(msg), code(code), kind(std::move(kind)) {}
    int code;
    std::string kind;
};

int fail(int code, const std::string& kind, const std::string& message) {
    std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
    return code;
}

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

AppConfig load_config(const std::string& path) {
    if (path.empty()) return {};
    return AppConfig::load(path);
}

Policy load_policy(const std::string& path, const std::string& config_path, const AppConfig& cfg) {
    if (path.empty() || !fs::exists(path)) throw CliError(kMissingCheckpoint, "missing_checkpoint", "checkpoint not found: " + path);
    Policy p = Policy::from_checkpoint(load_checkpoint(path));
    if (!config_path.empty() && !(p.config() == cfg.policy)) {
        throw CliError(kConfigMismatch, "config_mismatch",
                       "policy section of " + config_path + " does not match the checkpoint's embedded config");
    }
    return p;
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

// Normalised evaluation inputs: the manifest's validation split when given,
// otherwise fresh scripted renders.
std::vector<SceneImage> bench_inputs(const Policy& p, const std::string& manifest_path, std::size_t n,
                                     std::uint64_t seed) {
    std::vector<SceneImage> out;
    if (!manifest_path.empty()) {
        const DatasetManifest m = load_manifest(manifest_path);
        auto val = materialize(m, Split::Val, file_image_loader(fs::path(manifest_path).parent_path()),
                               p.config().action_vocab);
        for (auto& s : val) {
            if (out.size() == n) break;
            out.push_back(std::move(s.image));
        }
        return out;
    }
    TeleopSessionConfig sc;
    sc.quotas = reference_class_quotas(n);
    sc.seed = seed;
    const TeleopSession session = generate_teleop_session(sc);
    for (const auto& r : session.log) {
        if (!r.is_frame()) continue;
        const SceneImage& raw = session.frames.at(*r.image);
        out.push_back(preprocess_image(raw, p.config().image_size, p.stats()));
    }
    return out;
}

int cmd_capture(const fs::path& out, std::size_t synthetic, std::uint64_t seed, double duration, std::uint16_t port) {
    if (synthetic > 0) {
        TeleopSessionConfig sc;
        sc.quotas = reference_class_quotas(synthetic);
        sc.seed = seed;
        const TeleopSession session = generate_teleop_session(sc);
        session.write(out);
        std::cout << json{{"capture_log", (out / "capture.ndjson").string()},
                          {"frames", session.frames.size()},
                          {"records", session.log.size()}}
                         .dump()
                  << std::endl;
        return kOk;
    }
    Rng rng(seed);
    const WorldSpec world = random_world(rng);
    LiveRuntime runtime(world, random_start(world, rng), RuntimeConfig{}, nullptr);
    runtime.set_mode(RuntimeMode::Teleop);
    WireServer server(runtime, WireServerConfig{.port = port, .capture_dir = out});
    runtime.start();
    server.start();
    std::cout << json{{"listening", server.port()}, {"capture_dir", out.string()}}.dump() << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    while (!g_interrupted &&
           (duration <= 0.0 || std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < duration)) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    server.stop();
    runtime.stop();
    std::cout << json{{"frames_recorded", server.frames_recorded()}}.dump() << std::endl;
    return kOk;
}

int cmd_preprocess(const fs::path& log_path, const fs::path& out, const AppConfig& cfg) {
    const auto log = read_capture_log(log_path);
    const DatasetManifest m = build_manifest(log, cfg.pipeline, file_image_loader(log_path.parent_path()));
    DatasetManifest saved = m;
    saved.provenance["capture_log"] = fs::relative(fs::absolute(log_path), fs::absolute(out).parent_path()).string();
    // Image refs stay relative to the log; rewrite them relative to the manifest.
    const fs::path rel = fs::relative(fs::absolute(log_path).parent_path(), fs::absolute(out).parent_path());
    for (auto& s : saved.samples) s.image = (rel / s.image).lexically_normal().string();
    save_manifest(out, saved);
    json counts = json::object();
    for (const auto& [v, n] : m.class_counts) counts[std::string(verb_name(v))] = n;
    std::cout << json{{"manifest", out.string()},
                      {"train", m.count(Split::Train)},
                      {"val", m.count(Split::Val)},
                      {"dropped_frames", m.dropped_frames},
                      {"class_counts", counts}}
                     .dump()
              << std::endl;
    return kOk;
}

int cmd_train(const fs::path& manifest_path, const fs::path& out, const AppConfig& cfg) {
    const DatasetManifest m = load_manifest(manifest_path);
    if (m.target_size != cfg.policy.image_size) {
        throw CliError(kConfigMismatch, "config_mismatch",
                       "manifest images are " + std::to_string(m.target_size) + " px but policy.image_size is " +
                           std::to_string(cfg.policy.image_size));
    }
    const auto loader = file_image_loader(manifest_path.parent_path());
    const auto train_set = materialize(m, Split::Train, loader, cfg.policy.action_vocab);
    const auto val_set = materialize(m, Split::Val, loader, cfg.policy.action_vocab);
    Policy p = Policy::create(cfg.policy);
    p.set_stats(m.stats);
    const auto t0 = std::chrono::steady_clock::now();
    const TrainResult r = train(p, train_set, val_set, cfg.train, [&](std::size_t e, const EpochStats& s) {
        std::cout << json{{"epoch", e + 1},
                          {"train_loss", s.train_loss},
                          {"val_loss", s.val_loss},
                          {"val_accuracy", s.val_accuracy},
                          {"elapsed_s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}}
                         .dump()
                  << std::endl;
    });
    Checkpoint ck = p.to_checkpoint();
    ck.metadata["training"] = cfg.train.to_json();
    ck.metadata["training"]["steps"] = r.steps;
    ck.metadata["training"]["final_val_accuracy"] = r.epochs.back().val_accuracy;
    ck.metadata["dataset"] = {{"train", train_set.size()}, {"val", val_set.size()}, {"seed", m.seed}};
    save_checkpoint(out, ck);
    std::cout << json{{"checkpoint", out.string()}, {"steps", r.steps}}.dump() << std::endl;
    return kOk;
}

int cmd_quantize(const Policy& p, const fs::path& out, const std::string& mode, bool double_quant) {
    const Policy q = quantize_policy(p, precision_from_name(mode), double_quant);
    save_checkpoint(out, q.to_checkpoint());
    const PolicyMemory mem = policy_memory(q);
    std::cout << json{{"checkpoint", out.string()},
                      {"precision", mode},
                      {"file_bytes", fs::file_size(out)},
                      {"backbone_bits_per_parameter", mem.backbone.bits_per_parameter},
                      {"whole_reduction", mem.whole.reduction_fraction}}
                     .dump()
              << std::endl;
    return kOk;
}

int cmd_run(const Policy& p, const AppConfig& cfg, std::size_t episodes, std::uint64_t seed, double latency,
            double duration, bool expert, const std::string& out) {
    auto shared = std::make_shared<const Policy>(p);
    Rng rng(seed);
    std::size_t successes = 0;
    LatencyStats all;
    json eps = json::array();
    for (std::size_t i = 0; i < episodes; ++i) {
        const WorldSpec world = random_world(rng);
        const RobotState start = random_start(world, rng);
        const Reasoner r = expert ? expert_reasoner(world, p.config().action_table) : policy_reasoner(shared);
        EpisodeOptions opts;
        opts.duration = duration;
        if (latency >= 0.0) opts.latency = [latency](std::size_t) { return latency; };
        const EpisodeResult res = run_episode(world, start, r, cfg.runtime, opts);
        successes += res.success;
        for (double l : res.latency.samples()) all.add(l);
        eps.push_back({{"episode", i}, {"success", res.success}, {"elapsed_s", res.elapsed},
                       {"queries", res.queries_started}, {"errors", res.errors}});
    }
    json summary{{"precision", precision_name(p.precision())},
                 {"episodes", episodes},
                 {"successes", successes},
                 {"success_rate", episodes ? static_cast<double>(successes) / static_cast<double>(episodes) : 0.0},
                 {"latency", all.to_json()}};
    if (!out.empty()) write_json(out, {{"summary", summary}, {"episodes", eps}});
    std::cout << summary.dump() << std::endl;
    return kOk;
}

int cmd_serve(std::optional<Policy> p, const AppConfig& cfg, std::uint16_t port, const std::string& capture_dir,
              double duration, std::uint64_t seed, double latency) {
    Rng rng(seed);
    const WorldSpec world = random_world(rng);
    Reasoner reasoner;
    if (p) reasoner = policy_reasoner(std::make_shared<const Policy>(*p));
    std::optional<double> injected;
    if (latency >= 0.0) injected = latency;
    LiveRuntime runtime(world, random_start(world, rng), cfg.runtime, reasoner, injected);
    WireServerConfig wc;
    wc.port = port;
    if (!capture_dir.empty()) wc.capture_dir = capture_dir;
    WireServer server(runtime, wc);
    runtime.start();
    server.start();
    std::cout << json{{"listening", server.port()}, {"policy", p.has_value()}}.dump() << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    while (!g_interrupted &&
           (duration <= 0.0 || std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < duration)) {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    server.stop();
    runtime.stop();
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"litevla: desk-scale visuomotor policy pipeline"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("-c,--config", config_path, "JSON config with policy/pipeline/runtime/bench sections");

    std::string out, in, checkpoint, manifest, log_path, mode = "hybrid", capture_dir;
    std::size_t synthetic = 0, episodes = 20, inputs = 500;
    std::uint64_t seed = 0;
    double duration = 0.0, latency = -1.0;
    std::uint16_t port = 8765;
    bool double_quant = false, expert = false, as_json = false;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;

    auto* capture = app.add_subcommand("capture", "record a teleoperation session");
    capture->add_option("-o,--out", out, "session directory")->required();
    capture->add_option("--synthetic", synthetic, "generate N scripted frames instead of serving a live session");
    capture->add_option("--seed", seed);
    capture->add_option("--duration", duration, "live session length in seconds (0 = until interrupted)");
    capture->add_option("--port", port);

    auto* preprocess = app.add_subcommand("preprocess", "sync, label, split and normalise a capture log");
    preprocess->add_option("--log", log_path, "capture.ndjson")->required();
    preprocess->add_option("-o,--out", out, "manifest path")->required();

    auto* train_cmd = app.add_subcommand("train", "fit LoRA adapters on a manifest");
    train_cmd->add_option("--manifest", manifest)->required();
    train_cmd->add_option("-o,--out", out, "checkpoint path")->required();
    train_cmd->add_option("--epochs", epochs);
    train_cmd->add_option("--lr", lr);

    auto* quantize = app.add_subcommand("quantize", "convert an fp32 checkpoint");
    quantize->add_option("--in", in, "fp32 checkpoint")->required();
    quantize->add_option("-o,--out", out)->required();
    quantize->add_option("--mode", mode)->check(CLI::IsMember({"fp32", "hybrid", "nf4"}));
    quantize->add_flag("--double-quant", double_quant, "store block scales as 8-bit codes");

    auto* run = app.add_subcommand("run", "closed-loop episodes in the simulator");
    run->add_option("--checkpoint", checkpoint)->required();
    run->add_option("--episodes", episodes);
    run->add_option("--seed", seed);
    run->add_option("--latency", latency, "injected reasoning latency in seconds");
    run->add_option("--duration", duration, "episode timeout in seconds")->default_val(120.0);
    run->add_flag("--expert", expert, "drive with the scripted expert instead of the policy");
    run->add_option("-o,--out", out, "write per-episode JSON here");

    auto* bench = app.add_subcommand("bench", "latency and memory sweep over precision modes");
    bench->add_option("--checkpoint", checkpoint)->required();
    bench->add_option("--manifest", manifest, "use this manifest's validation split as inputs");
    bench->add_option("--inputs", inputs);
    bench->add_option("--seed", seed);
    bench->add_option("-o,--out", out, "report JSON path");

    auto* report = app.add_subcommand("report", "render a bench report");
    report->add_option("--in", in, "report JSON")->required();
    report->add_flag("--json", as_json);

    auto* serve = app.add_subcommand("serve", "wire protocol server over the simulator");
    serve->add_option("--checkpoint", checkpoint);
    serve->add_option("--port", port);
    serve->add_option("--capture-dir", capture_dir);
    serve->add_option("--duration", duration);
    serve->add_option("--seed", seed);
    serve->add_option("--latency", latency);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(kUsage, "usage", e.what());
    }

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    try {
        AppConfig cfg = load_config(config_path);
        if (epochs) cfg.train.epochs = *epochs;
        if (lr) cfg.train.learning_rate = *lr;
        if (*capture) return cmd_capture(out, synthetic, seed, duration, port);
        if (*preprocess) return cmd_preprocess(log_path, out, cfg);
        if (*train_cmd) return cmd_train(manifest, out, cfg);
        if (*quantize) return cmd_quantize(load_policy(in, config_path, cfg), out, mode, double_quant);
        if (*run) return cmd_run(load_policy(checkpoint, config_path, cfg), cfg, episodes, seed, latency, duration, expert, out);
        if (*bench) {
            const Policy p = load_policy(checkpoint, config_path, cfg);
            const auto xs = bench_inputs(p, manifest, inputs, seed + 1);
            const BenchReport rep = run_bench(p, xs, cfg.bench);
            if (!out.empty()) write_json(out, rep.to_json());
            std::cout << render_report(rep);
            return kOk;
        }
        if (*report) {
            std::ifstream f(in);
            if (!f) throw CliError(kFailure, "io", "cannot open report " + in);
            const BenchReport rep = BenchReport::from_json(json::parse(f));
            if (as_json) {
                std::cout << rep.to_json().dump() << std::endl;
            } else {
                std::cout << render_report(rep);
            }
            return kOk;
        }
        if (*serve) {
            std::optional<Policy> p;
            if (!checkpoint.empty()) p = load_policy(checkpoint, config_path, cfg);
            return cmd_serve(std::move(p), cfg, port, capture_dir, duration, seed, latency);
        }
    } catch (const CliError& e) {
        return fail(e.code, e.kind, e.what());
    } catch (const ConfigError& e) {
        return fail(kConfigMismatch, "config", e.what());
    } catch (const CheckpointError& e) {
        const std::string msg = e.what();
        const bool mismatch = msg.find("mismatch") != std::string::npos;
        return fail(mismatch ? kConfigMismatch : kFailure, mismatch ? "config_mismatch" : "checkpoint", msg);
    } catch (const std::exception& e) {
        return fail(kFailure, "error", e.what());
    }
    return fail(kUsage, "usage", "no subcommand");
}
