#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "litevla/tensor.hpp"

namespace litevla {

// 16-level NormalFloat code: normal quantiles rescaled to [-1, 1] with an exact zero.
struct NF4Codebook {
    std::array<float, 16> levels;

    std::uint8_t zero_code() const;
    // Largest distance between adjacent levels.
    float max_gap() const;
    // Nearest level to `normalized`; ties resolve to the lower index.
    std::uint8_t nearest(float normalized) const;
};

const NF4Codebook& nf4_codebook();

inline constexpr std::size_t kDefaultBlockSize = 64;
inline constexpr std::size_t kScaleGroupBlocks = 256;

// Input contained a NaN or infinity.
class QuantizationError : public std::invalid_argument {
public:
    QuantizationError(const std::string& what, std::size_t index)
        : std::invalid_argument(what), index_(index) {}
    std::size_t index() const { return index_; }

private:
    std::size_t index_;
};

// Packed payload lengths disagree with the declared shape.
class StructuralError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Per-block scales stored as 8-bit affine codes, one (step, offset) pair per
// group of kScaleGroupBlocks blocks.
struct DoubleQuantScales {
    std::vector<std::uint8_t> codes;
    std::vector<float> group_step;
    std::vector<float> group_offset;

    bool operator==(const DoubleQuantScales&) const = default;
};

class NF4QuantizedTensor {
public:
    NF4QuantizedTensor() = default;

    // Assembles a tensor from stored parts; throws StructuralError on any
    // length mismatch. `scales` is ignored when `dq` is present.
    static NF4QuantizedTensor from_parts(Shape shape, std::size_t block_size,
                                         std::vector<std::uint8_t> packed,
                                         std::vector<float> scales,
                                         std::optional<DoubleQuantScales> dq);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return numel_; }
    std::size_t block_size() const { return block_size_; }
    std::size_t block_count() const { return scales_.size(); }

    std::span<const std::uint8_t> packed_codes() const { return packed_; }
    std::uint8_t code(std::size_t i) const {
        const std::uint8_t byte = packed_[i >> 1];
        return (i & 1) ? static_cast<std::uint8_t>(byte >> 4) : static_cast<std::uint8_t>(byte & 0x0F);
    }
    // Effective per-block scales (reconstructed when double quantized).
    std::span<const float> scales() const { return scales_; }
    bool double_quantized() const { return dq_.has_value(); }
    const std::optional<DoubleQuantScales>& double_quant() const { return dq_; }

    bool operator==(const NF4QuantizedTensor&) const = default;

private:
    Shape shape_;
    std::size_t numel_ = 0;
    std::size_t block_size_ = kDefaultBlockSize;
    std::vector<std::uint8_t> packed_;
    std::vector<float> scales_;
    std::optional<DoubleQuantScales> dq_;
};

NF4QuantizedTensor quantize_nf4(const Tensor& t, std::size_t block_size = kDefaultBlockSize);

Tensor dequantize_nf4(const NF4QuantizedTensor& q);

struct DoubleQuantResult {
    NF4QuantizedTensor tensor;
    // Input already carried quantized scales; tensor is returned unchanged.
    bool was_noop = false;
};

DoubleQuantResult double_quantize_scales(const NF4QuantizedTensor& q);

// y = dequantize(q) * x, decoding one weight row at a time.
Tensor matvec_nf4(const NF4QuantizedTensor& q, const Tensor& x);
void matvec_nf4(const NF4QuantizedTensor& q, std::span<const float> x, std::span<float> y);

// Y[t, o] = sum_i X[t, i] * W[o, i] with W stored as NF4. Each decoded row is
// reused across all tokens.
void matmul_transposed_nf4(std::span<const float> x, std::size_t tokens,
                           const NF4QuantizedTensor& q, std::span<float> y);

struct MemoryReport {
    std::size_t params = 0;
    std::size_t fp32_bytes = 0;
    std::size_t quantized_bytes = 0;
    double bits_per_parameter = 0.0;
    double reduction_fraction = 0.0;

    MemoryReport& operator+=(const MemoryReport& other);
};

// Closed-form byte count of an NF4 payload: packed codes plus scale storage.
std::size_t nf4_payload_bytes(std::size_t numel, std::size_t block_size, bool double_quant);

MemoryReport memory_footprint(const NF4QuantizedTensor& q);
MemoryReport memory_footprint(const Tensor& t);

}  // namespace litevla
