#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "litevla/policy.hpp"

namespace litevla {

struct BenchConfig {
    std::size_t warmup = 3;
    std::size_t runs = 60;  // timed inferences per mode, interleaved across modes
    double agreement_threshold = 0.95;
    // Relative slack when comparing two medians that are expected to tie.
    double tie_tolerance = 0.03;

    void validate() const;
    nlohmann::json to_json() const;
    static BenchConfig from_json(const nlohmann::json& j);
};

struct BenchRow {
    std::string model;
    PrecisionMode precision = PrecisionMode::FP32;
    double latency_ms = 0.0;  // median
    std::vector<double> samples_ms;
    double agreement = 1.0;         // argmax agreement with the FP32 row
    double mean_logit_delta = 0.0;  // mean |logit - fp32 logit|
    PolicyMemory memory;
    std::string notes;
};

struct Environment {
    std::string cpu_model;
    unsigned cores = 0;
    std::string compiler;
};

Environment environment_fingerprint();

struct BenchReport {
    std::vector<BenchRow> rows;
    Environment env;
    BenchConfig config;
    std::size_t inputs = 0;

    const BenchRow& row(PrecisionMode m) const;
    nlohmann::json to_json() const;
    static BenchReport from_json(const nlohmann::json& j);
};

struct OrderingCheck {
    bool fp32_slower_than_hybrid = false;
    bool hybrid_not_faster_than_nf4 = false;  // within tie_tolerance
    bool holds() const { return fp32_slower_than_hybrid && hybrid_not_faster_than_nf4; }
};

OrderingCheck latency_ordering(const BenchReport& r);

// Times every precision mode derived from `fp32` on normalised `inputs` and
// measures agreement with the FP32 logits.
BenchReport run_bench(const Policy& fp32, std::span<const SceneImage> inputs, const BenchConfig& cfg,
                      const std::string& model_label = "litevla-toy");

// Aligned text table with Model / Precision / Latency / Notes columns.
std::string render_report(const BenchReport& r);

}  // namespace litevla
