#include "litevla/bench.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace litevla {

using nlohmann::json;

void BenchConfig::validate() const {
    if (runs < 20) throw std::invalid_argument("bench needs at least 20 timed runs");
    if (!(tie_tolerance >= 0.0)) throw std::invalid_argument("tie_tolerance must be non-negative");
}

json BenchConfig::to_json() const {
    return {{"warmup", warmup}, {"runs", runs}, {"agreement_threshold", agreement_threshold}, {"tie_tolerance", tie_tolerance}};
}

BenchConfig BenchConfig::from_json(const json& j) {
    BenchConfig c;
    c.warmup = j.value("warmup", c.warmup);
    c.runs = j.value("runs", c.runs);
    c.agreement_threshold = j.value("agreement_threshold", c.agreement_threshold);
    c.tie_tolerance = j.value("tie_tolerance", c.tie_tolerance);
    c.validate();
    return c;
}

Environment environment_fingerprint() {
    Environment e;
    e.cores = std::thread::hardware_concurrency();
    std::ifstream in("/proc/cpuinfo");
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(':');
            if (pos != std::string::npos) e.cpu_model = line.substr(pos + 2);
            break;
        }
    }
    if (e.cpu_model.empty()) e.cpu_model = "unknown";
#if defined(__clang__)
    e.compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
    e.compiler = "gcc " __VERSION__;
#else
    e.compiler = "unknown";
#endif
    return e;
}

const BenchRow& BenchReport::row(PrecisionMode m) const {
    for (const auto& r : rows) {
        if (r.precision == m) return r;
    }
    throw std::out_of_range(std::string("bench report has no ") + precision_name(m) + " row");
}

namespace {

json memory_json(const MemoryReport& m) {
    return {{"params", m.params},
            {"fp32_bytes", m.fp32_bytes},
            {"quantized_bytes", m.quantized_bytes},
            {"bits_per_parameter", m.bits_per_parameter},
            {"reduction_fraction", m.reduction_fraction}};
}

MemoryReport memory_from(const json& j) {
    MemoryReport m;
    m.params = j.at("params").get<std::size_t>();
    m.fp32_bytes = j.at("fp32_bytes").get<std::size_t>();
    m.quantized_bytes = j.at("quantized_bytes").get<std::size_t>();
    m.bits_per_parameter = j.at("bits_per_parameter").get<double>();
    m.reduction_fraction = j.at("reduction_fraction").get<double>();
    return m;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

json BenchReport::to_json() const {
    json j;
    j["format"] = "litevla-bench";
    j["environment"] = {{"cpu_model", env.cpu_model}, {"cores", env.cores}, {"compiler", env.compiler}};
    j["config"] = config.to_json();
    j["inputs"] = inputs;
    j["latency_units"] = "ms";
    j["rows"] = json::array();
    for (const auto& r : rows) {
        j["rows"].push_back({{"model", r.model},
                             {"precision", precision_name(r.precision)},
                             {"latency_ms", r.latency_ms},
                             {"samples_ms", r.samples_ms},
                             {"agreement", r.agreement},
                             {"mean_logit_delta", r.mean_logit_delta},
                             {"memory", {{"backbone", memory_json(r.memory.backbone)}, {"whole", memory_json(r.memory.whole)}}},
                             {"notes", r.notes}});
    }
    const OrderingCheck o = latency_ordering(*this);
    j["ordering"] = {{"fp32_slower_than_hybrid", o.fp32_slower_than_hybrid},
                     {"hybrid_not_faster_than_nf4", o.hybrid_not_faster_than_nf4}};
    return j;
}

BenchReport BenchReport::from_json(const json& j) {
    if (j.value("format", "") != "litevla-bench") throw std::invalid_argument("not a litevla bench report");
    BenchReport r;
    r.env.cpu_model = j.at("environment").at("cpu_model").get<std::string>();
    r.env.cores = j.at("environment").at("cores").get<unsigned>();
    r.env.compiler = j.at("environment").value("compiler", "");
    r.config = BenchConfig::from_json(j.at("config"));
    r.inputs = j.at("inputs").get<std::size_t>();
    for (const auto& row : j.at("rows")) {
        BenchRow b;
        b.model = row.at("model").get<std::string>();
        b.precision = precision_from_name(row.at("precision").get<std::string>());
        b.latency_ms = row.at("latency_ms").get<double>();
        b.samples_ms = row.at("samples_ms").get<std::vector<double>>();
        b.agreement = row.at("agreement").get<double>();
        b.mean_logit_delta = row.at("mean_logit_delta").get<double>();
        b.memory.backbone = memory_from(row.at("memory").at("backbone"));
        b.memory.whole = memory_from(row.at("memory").at("whole"));
        b.notes = row.at("notes").get<std::string>();
        r.rows.push_back(std::move(b));
    }
    return r;
}

OrderingCheck latency_ordering(const BenchReport& r) {
    OrderingCheck o;
    const double fp = r.row(PrecisionMode::FP32).latency_ms;
    const double hy = r.row(PrecisionMode::Hybrid).latency_ms;
    const double nf = r.row(PrecisionMode::FullNF4).latency_ms;
    o.fp32_slower_than_hybrid = fp > hy;
    o.hybrid_not_faster_than_nf4 = hy >= nf * (1.0 - r.config.tie_tolerance);
    return o;
}

BenchReport run_bench(const Policy& fp32, std::span<const SceneImage> inputs, const BenchConfig& cfg,
                      const std::string& model_label) {
    cfg.validate();
    if (inputs.empty()) throw std::invalid_argument("bench needs at least one input");
    if (fp32.precision() != PrecisionMode::FP32) throw std::invalid_argument("bench expects an fp32 policy");
    const std::vector<Policy> policies{fp32, quantize_policy(fp32, PrecisionMode::Hybrid),
                                       quantize_policy(fp32, PrecisionMode::FullNF4)};
    BenchReport rep;
    rep.env = environment_fingerprint();
    rep.config = cfg;
    rep.inputs = inputs.size();

    std::vector<ActionLogits> ref;
    for (const auto& img : inputs) ref.push_back(fp32.forward(img));

    for (const auto& p : policies) {
        BenchRow row;
        row.model = model_label;
        row.precision = p.precision();
        row.memory = policy_memory(p);
        std::size_t agree = 0;
        double delta = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            const ActionLogits lg = p.forward(inputs[i]);
            agree += lg.argmax() == ref[i].argmax();
            for (std::size_t c = 0; c < lg.values.size(); ++c) delta += std::abs(lg.values[c] - ref[i].values[c]);
        }
        row.agreement = static_cast<double>(agree) / static_cast<double>(inputs.size());
        row.mean_logit_delta = delta / static_cast<double>(inputs.size() * ref[0].values.size());
        rep.rows.push_back(std::move(row));
    }

    for (std::size_t w = 0; w < cfg.warmup; ++w) {
        for (const auto& p : policies) (void)p.forward(inputs[w % inputs.size()]);
    }
    // Interleave modes so drift in machine load hits all rows alike.
    volatile float sink = 0.0f;
    for (std::size_t r = 0; r < cfg.runs; ++r) {
        const SceneImage& img = inputs[r % inputs.size()];
        for (std::size_t m = 0; m < policies.size(); ++m) {
            const auto t0 = std::chrono::steady_clock::now();
            const ActionLogits lg = policies[m].forward(img);
            const auto t1 = std::chrono::steady_clock::now();
            sink = sink + lg.values[0];
            rep.rows[m].samples_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
    }
    for (auto& row : rep.rows) {
        row.latency_ms = median(row.samples_ms);
        std::ostringstream notes;
        notes << std::fixed << std::setprecision(1);
        switch (row.precision) {
            case PrecisionMode::FP32:
                notes << "reference, adapters unmerged";
                break;
            case PrecisionMode::Hybrid:
            case PrecisionMode::FullNF4:
                notes << (row.agreement >= cfg.agreement_threshold ? "stable" : "unstable") << ", agreement "
                      << 100.0 * row.agreement << "%, "
                      << (row.precision == PrecisionMode::Hybrid ? "FP32 head" : "NF4 head");
                break;
        }
        notes << ", " << std::setprecision(1) << 100.0 * row.memory.whole.reduction_fraction << "% smaller";
        row.notes = notes.str();
    }
    return rep;
}

std::string render_report(const BenchReport& r) {
    std::vector<std::array<std::string, 4>> cells{{"Model", "Precision", "Latency", "Notes"}};
    for (const auto& row : r.rows) {
        std::ostringstream lat;
        lat << std::fixed << std::setprecision(3) << row.latency_ms << " ms";
        cells.push_back({row.model, precision_name(row.precision), lat.str(), row.notes});
    }
    std::array<std::size_t, 4> width{};
    for (const auto& c : cells) {
        for (std::size_t i = 0; i < 4; ++i) width[i] = std::max(width[i], c[i].size());
    }
    std::ostringstream out;
    auto line = [&](const std::array<std::string, 4>& c) {
        for (std::size_t i = 0; i < 4; ++i) {
            out << c[i];
            if (i + 1 < 4) out << std::string(width[i] - c[i].size() + 2, ' ');
        }
        out << "\n";
    };
    line(cells[0]);
    out << std::string(width[0] + width[1] + width[2] + width[3] + 6, '-') << "\n";
    for (std::size_t i = 1; i < cells.size(); ++i) line(cells[i]);
    out << "host: " << r.env.cpu_model << ", " << r.env.cores << " core(s); median of " << r.config.runs
        << " runs after " << r.config.warmup << " warm-up\n";
    return out.str();
}

}  // namespace litevla
