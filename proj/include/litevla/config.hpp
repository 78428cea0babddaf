#pragma once

#include <filesystem>

#include "json.hpp"
#include "litevla/bench.hpp"
#include "litevla/data_pipeline.hpp"
#include "litevla/policy.hpp"
#include "litevla/runtime.hpp"
#include "litevla/train.hpp"

namespace litevla {

// One JSON document with `policy` (training hyperparameters nested under
// `policy.train`), `pipeline`, `runtime` and `bench` sections. Missing keys
// keep their defaults; unknown sections are rejected.
struct AppConfig {
    PolicyConfig policy;
    TrainConfig train;
    PreprocessConfig pipeline;
    RuntimeConfig runtime;
    BenchConfig bench;

    nlohmann::json to_json() const;
    static AppConfig from_json(const nlohmann::json& j);
    static AppConfig load(const std::filesystem::path& path);
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace litevla
