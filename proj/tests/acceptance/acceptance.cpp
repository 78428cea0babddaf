// Runs each headline criterion at its stated tolerance and prints one line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "litevla/action_grammar.hpp"
#include "litevla/bench.hpp"
#include "litevla/checkpoint.hpp"
#include "litevla/data_pipeline.hpp"
#include "litevla/lora.hpp"
#include "litevla/nf4.hpp"
#include "litevla/policy.hpp"
#include "litevla/rng.hpp"
#include "litevla/runtime.hpp"
#include "litevla/sim.hpp"
#include "litevla/synthetic.hpp"
#include "litevla/train.hpp"
#include "oracles.hpp"

using namespace litevla;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
    std::printf("%s %s: %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void run(const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const std::exception& e) {
        report(name, false, std::string("exception: ") + e.what());
    }
}

void nf4_correctness() {
    Stopwatch sw;
    Rng rng(101);
    Tensor t({100000});
    for (auto& v : t.values()) v = static_cast<float>(rng.normal());
    const auto q = quantize_nf4(t, 64);
    const auto d = dequantize_nf4(q);
    const auto table = oracle::nf4_table();
    std::array<float, 16> levels{};
    for (std::size_t i = 0; i < 16; ++i) levels[i] = static_cast<float>(table[i]);
    double max_gap = 0.0;
    for (std::size_t i = 1; i < 16; ++i) max_gap = std::max(max_gap, table[i] - table[i - 1]);
    std::size_t mismatches = 0, violations = 0;
    for (std::size_t i = 0; i < t.numel(); ++i) {
        const float s = q.scales()[i / 64];
        if (oracle::nearest_level(t[i] / s, levels) != q.code(i)) ++mismatches;
        if (std::fabs(double(t[i]) - double(d[i])) > double(s) * max_gap / 2.0) ++violations;
    }
    const double secs = sw.seconds();
    report("nf4_correctness", mismatches == 0 && violations == 0 && secs < 5.0,
           fmt("1e5 samples, %zu code mismatches, %zu bound violations, %.2f s", mismatches, violations, secs));
}

std::size_t oracle_payload(const TableEntry& e) {
    std::size_t n = 1;
    for (auto s : e.shape) n *= s;
    switch (e.dtype) {
        case DType::FP32: return 4 * n;
        case DType::NF4: return oracle::nf4_bytes(n, e.block_size, false);
        case DType::NF4DQ: return oracle::nf4_bytes(n, e.block_size, true);
    }
    return 0;
}

// Every table entry sized by the formula; payloads tile the file from the first offset to EOF.
bool file_matches_formula(const std::vector<std::uint8_t>& bytes, std::size_t& nf4_bytes, std::size_t& nf4_params) {
    const auto table = read_tensor_table(bytes);
    bool ok = !table.empty();
    std::uint64_t cursor = table.empty() ? 0 : table.front().offset;
    nf4_bytes = nf4_params = 0;
    for (const auto& e : table) {
        ok = ok && e.nbytes == oracle_payload(e) && e.offset == cursor;
        cursor += e.nbytes;
        if (e.dtype != DType::FP32) {
            nf4_bytes += e.nbytes;
            std::size_t n = 1;
            for (auto s : e.shape) n *= s;
            nf4_params += n;
        }
    }
    return ok && cursor == bytes.size();
}

void memory_formula() {
    Rng rng(102);
    Tensor big({1024, 1024});
    for (auto& v : big.values()) v = static_cast<float>(rng.normal());
    const auto q = quantize_nf4(big, 64);
    const double plain = memory_footprint(q).bits_per_parameter;
    const double dq = memory_footprint(double_quantize_scales(q).tensor).bits_per_parameter;

    const Policy fp = Policy::create(PolicyConfig{});
    const Policy hy = quantize_policy(fp, PrecisionMode::Hybrid);
    const Policy hy_dq = quantize_policy(fp, PrecisionMode::Hybrid, true);
    const auto fp_bytes = serialize_checkpoint(fp.to_checkpoint());
    const auto hy_bytes = serialize_checkpoint(hy.to_checkpoint());
    const auto dq_bytes = serialize_checkpoint(hy_dq.to_checkpoint());
    std::size_t nb = 0, np = 0, nb_dq = 0, np_dq = 0, unused = 0;
    const bool files = file_matches_formula(fp_bytes, unused, unused) && file_matches_formula(hy_bytes, nb, np) &&
                       file_matches_formula(dq_bytes, nb_dq, np_dq);
    const double file_bits = 8.0 * double(nb) / double(np);
    const auto mem = policy_memory(hy);
    const bool consistent = mem.backbone.quantized_bytes == nb && mem.backbone.params == np &&
                            policy_memory(hy_dq).backbone.quantized_bytes == nb_dq;
    const double reduction = mem.whole.reduction_fraction;
    const double file_reduction = 1.0 - double(hy_bytes.size()) / double(fp_bytes.size());
    report("memory_formula",
           plain == 4.5 && std::fabs(dq - 4.127) <= 0.002 && files && file_bits == 4.5 && consistent &&
               reduction >= 0.70,
           fmt("bits/param %.4f, double-quant %.5f, serialized backbone %.4f bits, table sizes exact: %s, "
               "hybrid whole-model reduction %.3f (file %.3f)",
               plain, dq, file_bits, files && consistent ? "yes" : "no", reduction, file_reduction));
}

void lora_neutrality_and_gradients() {
    Stopwatch sw;
    Rng rng(103);
    std::size_t neutral_fail = 0;
    double worst = 0.0;
    for (int n = 0; n < 100; ++n) {
        const std::size_t d_in = 1 + rng.below(64), d_out = 1 + rng.below(64), rank = 1 + rng.below(8);
        AdaptedLinear layer;
        layer.base = Tensor::normal({d_out, d_in}, rng, 0.5);
        auto ad = LoRAAdapter::create(d_in, d_out, rank, static_cast<float>(rng.uniform(0.5, 16.0)), 0.1f, rng);
        layer.adapter = ad;
        std::vector<float> x(d_in), up(d_out);
        for (auto& v : x) v = static_cast<float>(rng.normal());
        for (auto& v : up) v = static_cast<float>(rng.normal());
        AdaptedLinear bare = layer;
        bare.adapter.reset();
        if (adapter_forward(layer, x, false) != adapter_forward(bare, x, false)) ++neutral_fail;

        layer.adapter->B = Tensor::normal({d_out, rank}, rng, 0.3);
        const auto g = adapter_gradients(layer, x, up);
        const auto& w = std::get<Tensor>(layer.base).values();
        std::vector<double> wd(w.begin(), w.end()), xd(x.begin(), x.end());
        std::vector<double> a(layer.adapter->A.values().begin(), layer.adapter->A.values().end());
        std::vector<double> b(layer.adapter->B.values().begin(), layer.adapter->B.values().end());
        const double s = layer.adapter->scaling();
        auto loss = [&] {
            const auto y = oracle::lora_forward<double>(wd, a, b, d_in, d_out, rank, s, xd);
            double l = 0.0;
            for (std::size_t o = 0; o < d_out; ++o) l += y[o] * up[o];
            return l;
        };
        auto rel = [&](std::vector<double>& p, std::span<const float> analytic) {
            const double h = 1e-6;
            double diff = 0.0, ref = 0.0;
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double keep = p[i];
                p[i] = keep + h;
                const double hi = loss();
                p[i] = keep - h;
                const double lo = loss();
                p[i] = keep;
                const double num = (hi - lo) / (2 * h);
                diff += (analytic[i] - num) * (analytic[i] - num);
                ref += num * num;
            }
            return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
        };
        worst = std::max({worst, rel(a, g.dA.values()), rel(b, g.dB.values())});
    }
    // whole-model neutrality: fresh adapters against the same weights folded without adapters
    const Policy p = Policy::create(PolicyConfig{});
    const Policy folded = merge_adapters(p);
    Rng img_rng(104);
    std::size_t policy_fail = 0;
    for (int i = 0; i < 20; ++i) {
        SceneImage img(32, 32);
        for (auto& v : img.data) v = static_cast<float>(img_rng.normal());
        if (p.forward(img).values != folded.forward(img).values) ++policy_fail;
    }
    const double secs = sw.seconds();
    report("lora_neutrality_gradients", neutral_fail == 0 && policy_fail == 0 && worst <= 1e-4 && secs < 30.0,
           fmt("100 layers, %zu non-identical outputs, %zu policy outputs differ, max relative gradient error "
               "%.2e, %.2f s",
               neutral_fail, policy_fail, worst, secs));
}

void grammar() {
    Rng rng(105);
    std::size_t bad = 0;
    for (int i = 0; i < 10000; ++i) {
        ActionCommand c;
        c.verb = kAllVerbs[rng.below(kAllVerbs.size())];
        c.magnitude = c.verb == Verb::Stop ? 0.0 : std::round(rng.uniform(0.0, 1.0) * 1000.0) / 1000.0;
        c.duration = std::round(rng.uniform(0.1, 10.0) * 100.0) / 100.0;
        const std::string s = serialize_action(c);
        const auto back = parse_action(s);
        if (!(back == c) || serialize_action(back) != s) ++bad;
    }
    const auto f = parse_action("forward_0.2_3.0s");
    const auto t = parse_action("turn_left_0.1_2.5s");
    const bool paper = f.verb == Verb::Forward && f.magnitude == 0.2 && f.duration == 3.0 &&
                       t.verb == Verb::TurnLeft && t.magnitude == 0.1 && t.duration == 2.5;
    report("action_grammar", bad == 0 && paper,
           fmt("1e4 round trips, %zu failures; forward_0.2_3.0s -> (forward, 0.2, 3.0), turn_left_0.1_2.5s -> "
               "(turn_left, 0.1, 2.5): %s",
               bad, paper ? "ok" : "wrong"));
}

std::vector<std::int64_t> jittered(Rng& rng, std::size_t n, std::int64_t period, std::int64_t jitter,
                                   std::int64_t start) {
    std::vector<std::int64_t> ts(n);
    for (std::size_t i = 0; i < n; ++i) {
        ts[i] = start + static_cast<std::int64_t>(i) * period + static_cast<std::int64_t>(rng.below(2 * jitter + 1)) -
                jitter;
    }
    std::sort(ts.begin(), ts.end());
    return ts;
}

void synchronization() {
    Stopwatch sw;
    Rng rng(106);
    std::size_t bad = 0, largest = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        // total events per stream pair drawn log-uniformly up to 1e4; every 100th at the cap
        const double u = rng.uniform();
        const std::size_t total = trial % 100 == 0 ? 10000 : std::max<std::size_t>(2, std::size_t(std::pow(1e4, u)));
        const std::size_t ni = 1 + rng.below(total - 1);
        const std::size_t na = total - ni;
        largest = std::max(largest, total);
        const std::int64_t img_period = 200'000'000;
        const std::int64_t act_period = img_period * static_cast<std::int64_t>(ni) / std::int64_t(std::max<std::size_t>(na, 1));
        const std::int64_t jitter = 1 + static_cast<std::int64_t>(rng.below(80'000'000));
        const auto img = jittered(rng, ni, img_period, jitter, static_cast<std::int64_t>(rng.below(50'000'000)));
        auto act = jittered(rng, na, std::max<std::int64_t>(act_period, 1), jitter, 0);
        if (rng.bernoulli(0.2) && !act.empty()) {
            act.push_back(act[rng.below(act.size())]);
            std::sort(act.begin(), act.end());
        }
        const std::int64_t tol = static_cast<std::int64_t>(rng.below(150'000'000));
        std::size_t dropped = 0;
        const auto ref = oracle::synchronize(img, act, tol, dropped);
        const auto got = synchronize(img, act, tol);
        bool same = got.dropped == dropped && got.matches.size() == ref.size();
        for (std::size_t i = 0; same && i < ref.size(); ++i) {
            same = got.matches[i].image_index == ref[i].image && got.matches[i].action_index == ref[i].action &&
                   got.matches[i].delta_ns == ref[i].delta;
        }
        if (!same) ++bad;
    }
    const double secs = sw.seconds();
    report("synchronization", bad == 0 && secs < 60.0,
           fmt("1000 streams up to %zu events, %zu disagreements with the brute-force oracle, %.2f s", largest, bad,
               secs));
}

void split() {
    std::vector<Verb> labels;
    const std::map<Verb, std::size_t> counts{{Verb::Forward, 2990},  {Verb::Backward, 2990}, {Verb::TurnLeft, 2990},
                                             {Verb::TurnRight, 2990}, {Verb::Stop, 1152}};
    for (const auto& [v, n] : counts) labels.insert(labels.end(), n, v);
    Rng(107).shuffle(std::span<Verb>(labels));
    const auto a = stratified_split(labels, 0.85, 7);
    const auto b = stratified_split(labels, 0.85, 7);
    double worst = 0.0;
    std::string detail;
    for (const auto& [v, n] : counts) {
        std::size_t train_n = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) train_n += labels[i] == v && a[i] == Split::Train;
        worst = std::max(worst, std::fabs(double(train_n) - 0.85 * double(n)));
        detail += fmt("%s %zu/%zu, ", std::string(verb_name(v)).c_str(), train_n, n);
    }
    report("stratified_split", worst <= 1.0 && a == b,
           detail + fmt("max deviation %.2f samples, deterministic: %s", worst, a == b ? "yes" : "no"));
}

struct Trained {
    Policy policy;
    std::vector<LabeledImage> val;
};

std::optional<Trained> end_to_end_training() {
    Stopwatch sw;
    TeleopSessionConfig sc;
    sc.quotas = reference_class_quotas(6000);
    sc.seed = 108;
    const TeleopSession session = generate_teleop_session(sc);
    PreprocessConfig pc;
    const DatasetManifest m = build_manifest(session.log, pc, session.loader());
    const PolicyConfig cfg;
    const auto train_set = materialize(m, Split::Train, session.loader(), cfg.action_vocab);
    auto val_set = materialize(m, Split::Val, session.loader(), cfg.action_vocab);
    Policy p = Policy::create(cfg);
    p.set_stats(m.stats);
    const TrainConfig tc;
    const auto r = train(p, train_set, val_set, tc);
    const double acc = r.epochs.back().val_accuracy;
    const double secs = sw.seconds();
    report("end_to_end_training",
           train_set.size() + val_set.size() >= 5000 && r.epochs.size() == 2 && acc >= 0.90 && secs < 600.0,
           fmt("%zu train / %zu val samples, %zu epochs, val accuracy %.4f, %.1f s", train_set.size(), val_set.size(),
               r.epochs.size(), acc, secs));
    return Trained{std::move(p), std::move(val_set)};
}

Policy reload(const Policy& p) { return Policy::from_checkpoint(parse_checkpoint(serialize_checkpoint(p.to_checkpoint()))); }

void merge_equivalence(const Trained& t) {
    const Policy adapters = reload(t.policy);
    const Policy merged = reload(merge_adapters(t.policy));
    std::size_t differ = 0;
    for (const auto& s : t.val) differ += adapters.forward(s.image).argmax() != merged.forward(s.image).argmax();
    report("merge_equivalence", differ == 0 && !t.val.empty(),
           fmt("%zu validation inputs, %zu argmax differences between adapter-form and merged checkpoints",
               t.val.size(), differ));
}

void hybrid_stability(const Trained& t) {
    TeleopSessionConfig sc;
    sc.quotas = reference_class_quotas(500);
    sc.seed = 109;
    const TeleopSession session = generate_teleop_session(sc);
    std::vector<SceneImage> inputs;
    for (const auto& r : session.log) {
        if (r.is_frame()) {
            inputs.push_back(preprocess_image(session.frames.at(*r.image), t.policy.config().image_size,
                                              t.policy.stats()));
        }
    }
    const Policy& fp = t.policy;
    const Policy hy = quantize_policy(fp, PrecisionMode::Hybrid);
    const Policy nf = quantize_policy(fp, PrecisionMode::FullNF4);
    std::size_t agree_hy = 0, agree_nf = 0;
    double delta_hy = 0.0, delta_nf = 0.0;
    for (const auto& x : inputs) {
        const auto ref = fp.forward(x), a = hy.forward(x), b = nf.forward(x);
        agree_hy += a.argmax() == ref.argmax();
        agree_nf += b.argmax() == ref.argmax();
        for (std::size_t k = 0; k < ref.values.size(); ++k) {
            delta_hy += std::fabs(a.values[k] - ref.values[k]);
            delta_nf += std::fabs(b.values[k] - ref.values[k]);
        }
    }
    const double n = double(inputs.size());
    const double ah = agree_hy / n, an = agree_nf / n;
    const double k = double(fp.forward(inputs[0]).values.size());
    delta_hy /= n * k;
    delta_nf /= n * k;
    const BenchReport bench = run_bench(fp, inputs, BenchConfig{});
    const auto order = latency_ordering(bench);
    const double l_fp = bench.row(PrecisionMode::FP32).latency_ms, l_hy = bench.row(PrecisionMode::Hybrid).latency_ms,
                 l_nf = bench.row(PrecisionMode::FullNF4).latency_ms;
    report("hybrid_stability",
           inputs.size() == 500 && ah >= 0.95 && ah > an && delta_hy < delta_nf && order.holds(),
           fmt("%zu held-out inputs, agreement hybrid %.4f vs full-nf4 %.4f, mean logit delta hybrid %.5f vs full-nf4 "
               "%.5f, median latency fp32 %.3f ms > hybrid %.3f ms >= full-nf4 %.3f ms: %s",
               inputs.size(), ah, an, delta_hy, delta_nf, l_fp, l_hy, l_nf, order.holds() ? "yes" : "no"));
}

void asynchrony() {
    Rng rng(110);
    const WorldSpec world = random_world(rng);
    const RobotState start = random_start(world, rng);
    RuntimeConfig cfg;
    EpisodeOptions opts;
    opts.duration = 300.0;
    opts.stop_on_success = false;
    opts.latency = [](std::size_t) { return 11.1; };
    const auto r = run_episode(world, start, expert_reasoner(world, PolicyConfig{}.action_table), cfg, opts);
    // rate from consecutive completions
    double rate = 0.0;
    if (r.inferences.size() >= 2) {
        rate = double(r.inferences.size() - 1) / (r.inferences.back().t - r.inferences.front().t);
    }
    double gap = 0.0;
    for (std::size_t i = 1; i < r.emissions.size(); ++i) gap = std::max(gap, r.emissions[i].t - r.emissions[i - 1].t);
    // replay chunk windows: any tick outside every [issued, expires) must be exactly zero
    std::vector<std::pair<double, double>> windows;
    for (const auto& inf : r.inferences) windows.emplace_back(inf.t, inf.t + parse_action(inf.action).duration);
    std::size_t empty_ticks = 0, nonzero_empty = 0;
    for (const auto& e : r.emissions) {
        const bool covered = std::any_of(windows.begin(), windows.end(),
                                         [&](const auto& w) { return e.t >= w.first && e.t < w.second; });
        if (!covered || !e.seq) {
            ++empty_ticks;
            if (e.linear != 0.0 || e.angular != 0.0) ++nonzero_empty;
        }
    }
    const double period = 1.0 / cfg.control_hz;
    report("asynchrony",
           std::fabs(rate - 0.09) <= 0.009 && std::fabs(r.latency.rate_hz() - 0.09) <= 0.009 && gap <= 1.5 * period &&
               r.emissions.size() == 6000 && empty_ticks > 0 && nonzero_empty == 0,
           fmt("%zu inferences, reasoning rate %.4f Hz, %zu emissions over 300 s, max gap %.4f s (limit %.3f), %zu "
               "queue-empty ticks, %zu non-zero",
               r.inferences.size(), rate, r.emissions.size(), gap, 1.5 * period, empty_ticks, nonzero_empty));
}

}  // namespace

int main() {
    run("nf4_correctness", nf4_correctness);
    run("memory_formula", memory_formula);
    run("lora_neutrality_gradients", lora_neutrality_and_gradients);
    run("action_grammar", grammar);
    run("synchronization", synchronization);
    run("stratified_split", split);
    std::optional<Trained> trained;
    run("end_to_end_training", [&] { trained = end_to_end_training(); });
    if (trained) {
        run("merge_equivalence", [&] { merge_equivalence(*trained); });
        run("hybrid_stability", [&] { hybrid_stability(*trained); });
    } else {
        report("merge_equivalence", false, "no trained policy");
        report("hybrid_stability", false, "no trained policy");
    }
    run("asynchrony", asynchrony);
    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
