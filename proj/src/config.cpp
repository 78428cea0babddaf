#include "litevla/config.hpp"

#include <fstream>

namespace litevla {

using nlohmann::json;

json AppConfig::to_json() const {
    json p = policy.to_json();
    p["train"] = train.to_json();
    return {{"policy", p}, {"pipeline", pipeline.to_json()}, {"runtime", runtime.to_json()}, {"bench", bench.to_json()}};
}

AppConfig AppConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "policy" && key != "pipeline" && key != "runtime" && key != "bench") {
            throw ConfigError("unknown config section '" + key + "'");
        }
    }
    AppConfig c;
    try {
        if (j.contains("policy")) {
            c.policy = PolicyConfig::from_json(j["policy"]);
            if (j["policy"].contains("train")) c.train = TrainConfig::from_json(j["policy"]["train"]);
        }
        if (j.contains("pipeline")) c.pipeline = PreprocessConfig::from_json(j["pipeline"]);
        if (j.contains("runtime")) c.runtime = RuntimeConfig::from_json(j["runtime"]);
        if (j.contains("bench")) c.bench = BenchConfig::from_json(j["bench"]);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

AppConfig AppConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

}  // namespace litevla
