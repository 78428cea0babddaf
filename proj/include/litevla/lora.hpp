#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "litevla/nf4.hpp"
#include "litevla/tensor.hpp"

namespace litevla {

class Rng;

// Trainable low-rank delta: W_eff = W + (alpha / rank) * B * A.
struct LoRAAdapter {
    Tensor A;  // [rank, d_in]
    Tensor B;  // [d_out, rank]
    std::size_t rank = 8;
    float alpha = 8.0f;
    float dropout_p = 0.1f;

    float scaling() const { return alpha / static_cast<float>(rank); }

    // A ~ N(0, init_std^2), B = 0, so the adapter starts as an exact no-op.
    static LoRAAdapter create(std::size_t d_in, std::size_t d_out, std::size_t rank, float alpha,
                              float dropout_p, Rng& rng, double init_std = 0.02);

    bool operator==(const LoRAAdapter&) const = default;
};

using BaseWeight = std::variant<Tensor, NF4QuantizedTensor>;

// Frozen base projection plus an optional adapter. The base is never written
// by training.
struct AdaptedLinear {
    BaseWeight base;  // [d_out, d_in]
    std::optional<LoRAAdapter> adapter;
    std::optional<Tensor> bias;  // [d_out]

    std::size_t d_in() const;
    std::size_t d_out() const;
    bool quantized() const { return std::holds_alternative<NF4QuantizedTensor>(base); }

    bool operator==(const AdaptedLinear&) const = default;
};

// Activations kept from a batched forward pass for the backward pass.
struct LinearCache {
    std::vector<float> adapter_input;    // dropout(x), [tokens, d_in]; empty when dropout is off
    std::vector<std::uint8_t> keep;      // dropout keep mask, [tokens, d_in]
    std::vector<float> low_rank;         // A * dropout(x), [tokens, rank]
};

struct AdapterGradients {
    Tensor dA;  // [rank, d_in]
    Tensor dB;  // [d_out, rank]
};

// y = base(x) + (alpha/r) * B * A * drop(x) (+ bias). Dropout only when
// training; `rng` must then be non-null.
std::vector<float> adapter_forward(const AdaptedLinear& layer, std::span<const float> x, bool training,
                                   Rng* rng = nullptr);

// Full-precision merged weight. NF4 bases are dequantized first.
Tensor merge(const AdaptedLinear& layer);

// Gradients of upstream . y with respect to A and B (dropout off).
AdapterGradients adapter_gradients(const AdaptedLinear& layer, std::span<const float> x,
                                   std::span<const float> upstream);

// Row-batched variants used by the policy. Y is [tokens, d_out].
void linear_forward(const AdaptedLinear& layer, std::span<const float> x, std::size_t tokens,
                    std::span<float> y, LinearCache* cache, bool training, Rng* rng);

// Writes dX = dY * W_eff (through dropout) and accumulates adapter gradients
// into `grads` when non-null.
void linear_backward(const AdaptedLinear& layer, std::span<const float> x, std::span<const float> dy,
                     std::size_t tokens, const LinearCache& cache, std::span<float> dx,
                     AdapterGradients* grads);

// Base-only product with either weight representation.
void base_matmul(const BaseWeight& base, std::span<const float> x, std::size_t tokens, std::span<float> y);

}  // namespace litevla
