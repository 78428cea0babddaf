#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "litevla/action_grammar.hpp"
#include "litevla/checkpoint.hpp"
#include "litevla/image.hpp"
#include "litevla/lora.hpp"
#include "litevla/nf4.hpp"

namespace litevla {

class Rng;

enum class PrecisionMode { FP32, Hybrid, FullNF4 };

const char* precision_name(PrecisionMode m);
PrecisionMode precision_from_name(const std::string& name);

struct ActionSpec {
    double magnitude = 0.0;
    std::optional<double> duration;  // falls back to PolicyConfig::default_duration

    bool operator==(const ActionSpec&) const = default;
};

struct PolicyConfig {
    std::size_t image_size = 32;
    std::size_t channels = 3;
    std::size_t shuffle_factor = 4;
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 2;
    std::size_t ffn_dim = 128;
    std::vector<Verb> action_vocab{Verb::Forward, Verb::Backward, Verb::TurnLeft, Verb::TurnRight, Verb::Stop};
    std::map<Verb, ActionSpec> action_table{
        {Verb::Forward, {0.2, 3.0}},   {Verb::Backward, {0.2, 3.0}}, {Verb::TurnLeft, {0.1, 2.5}},
        {Verb::TurnRight, {0.1, 2.5}}, {Verb::Stop, {0.0, 0.5}},
    };
    double default_duration = 3.0;
    std::size_t lora_rank = 8;
    float lora_alpha = 8.0f;
    float lora_dropout = 0.1f;
    std::size_t quant_block_size = kDefaultBlockSize;
    std::uint64_t seed = 0;

    std::size_t tokens() const;
    std::size_t token_dim() const { return channels * shuffle_factor * shuffle_factor; }
    std::size_t class_index(Verb v) const;

    // Throws std::invalid_argument naming the violated constraint.
    void validate() const;

    nlohmann::json to_json() const;
    static PolicyConfig from_json(const nlohmann::json& j);

    bool operator==(const PolicyConfig&) const = default;
};

struct ActionLogits {
    std::vector<float> values;
    // Lowest index wins ties.
    std::size_t argmax() const;
};

// Space-to-depth: token (i, j) holds the f x f patch at rows i*f.., cols j*f..,
// ordered (dy, dx, channel). Output is [(H/f)*(W/f), 3*f*f].
Tensor pixel_shuffle_tokenize(const SceneImage& img, std::size_t factor);
SceneImage pixel_unshuffle(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t factor);

struct TransformerBlock {
    Tensor norm1;  // [d_model]
    AdaptedLinear q, k, v, o;
    Tensor norm2;
    AdaptedLinear gate, up, down;

    bool operator==(const TransformerBlock&) const = default;
};

// Gradient buffers for every adapter, in trainable_layer order.
using PolicyGradients = std::vector<AdapterGradients>;

class Policy {
public:
    // Random frozen base (seeded) with zero-initialised adapters on q, k, v, o, gate.
    static Policy create(const PolicyConfig& cfg);

    const PolicyConfig& config() const { return cfg_; }
    PrecisionMode precision() const;

    const NormalizationStats& stats() const { return stats_; }
    void set_stats(const NormalizationStats& s) { stats_ = s; }

    // Logits for an already-normalised image.
    ActionLogits forward(const SceneImage& normalized) const;
    // Resizes and normalises a raw [0, 1] frame, then runs forward.
    ActionLogits act(const SceneImage& raw) const;

    // Cross-entropy loss of one sample; adapter gradients are accumulated
    // into `grads` (scaled by `weight`). Dropout draws come from `rng`.
    double forward_backward(const SceneImage& normalized, std::size_t label, Rng& rng, PolicyGradients& grads,
                            float weight) const;

    std::vector<std::string> trainable_layer_names() const;
    std::vector<AdaptedLinear*> trainable_layers();
    std::vector<const AdaptedLinear*> trainable_layers() const;
    PolicyGradients zero_gradients() const;

    // Every linear projection except the head.
    std::vector<std::pair<std::string, const AdaptedLinear*>> backbone_linears() const;
    const AdaptedLinear& head() const { return head_; }

    Checkpoint to_checkpoint() const;
    static Policy from_checkpoint(const Checkpoint& ckpt);

    bool operator==(const Policy&) const = default;

private:
    friend Policy quantize_policy(const Policy&, PrecisionMode, bool);
    friend Policy merge_adapters(const Policy&);

    struct Cache;
    std::vector<float> run(const SceneImage& normalized, Cache* cache, bool training, Rng* rng) const;

    PolicyConfig cfg_;
    NormalizationStats stats_;
    AdaptedLinear embed_;
    Tensor pos_embed_;  // [tokens, d_model]
    std::vector<TransformerBlock> blocks_;
    Tensor final_norm_;
    AdaptedLinear head_;
};

// Folds every adapter into its base weight; result has no adapters.
Policy merge_adapters(const Policy& p);

// FP32: identity. Hybrid: merge, then NF4 backbone, fp32 head. FullNF4: head
// quantized too. Throws if `p` already holds NF4 tensors.
Policy quantize_policy(const Policy& p, PrecisionMode mode, bool double_quant = false);

std::string decode_action(const ActionLogits& logits, const PolicyConfig& cfg);

struct PolicyMemory {
    MemoryReport backbone;  // NF4-eligible linear weights only
    MemoryReport whole;     // every stored tensor
};

PolicyMemory policy_memory(const Policy& p);

}  // namespace litevla
