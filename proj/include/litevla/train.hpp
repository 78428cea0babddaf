#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "litevla/policy.hpp"

namespace litevla {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t batch_size = 16;
    std::size_t epochs = 2;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

// A normalised image and its class index into PolicyConfig::action_vocab.
struct LabeledImage {
    SceneImage image;
    std::size_t label = 0;
};

struct EpochStats {
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    std::size_t steps = 0;
};

struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<std::size_t> predictions;
};

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Adam over adapter matrices only; moments live alongside the policy.
class AdamOptimizer {
public:
    AdamOptimizer(const Policy& policy, const TrainConfig& cfg);
    void step(Policy& policy, const PolicyGradients& grads);
    std::size_t steps() const { return t_; }

private:
    TrainConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

using EpochCallback = std::function<void(std::size_t epoch, const EpochStats&)>;

// Mini-batch LoRA fit. Only adapter A/B matrices change. Throws TrainingError
// when the loss stops being finite.
TrainResult train(Policy& policy, std::span<const LabeledImage> train_set, std::span<const LabeledImage> val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

EvalResult evaluate(const Policy& policy, std::span<const LabeledImage> samples);

}  // namespace litevla
