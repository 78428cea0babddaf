#include "litevla/nf4.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace litevla {

namespace {

// Quantiles of N(0, 1) at 8 positive and 7 negative evenly spaced
// probabilities in [0.5, 0.9677083], normalised by the largest magnitude.
constexpr NF4Codebook kCodebook{{
    -1.0f,
    -0.6961928009986877f,
    -0.5250730514526367f,
    -0.39491748809814453f,
    -0.28444138169288635f,
    -0.18477343022823334f,
    -0.09105003625154495f,
    0.0f,
    0.07958029955625534f,
    0.16093020141124725f,
    0.24611230194568634f,
    0.33791524171829224f,
    0.44070982933044434f,
    0.5626170039176941f,
    0.7229568362236023f,
    1.0f,
}};

constexpr std::uint8_t kZeroCode = 7;

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

const NF4Codebook& nf4_codebook() { return kCodebook; }

std::uint8_t NF4Codebook::zero_code() const {
    for (std::uint8_t i = 0; i < 16; ++i) {
        if (levels[i] == 0.0f) return i;
    }
    return kZeroCode;
}

float NF4Codebook::max_gap() const {
    float g = 0.0f;
    for (std::size_t i = 1; i < levels.size(); ++i) g = std::max(g, levels[i] - levels[i - 1]);
    return g;
}

std::uint8_t NF4Codebook::nearest(float normalized) const {
    // Start from the midpoint bracket, then settle on the true float-distance
    // minimum; distance is unimodal over sorted levels.
    int c = 0;
    while (c < 15 && normalized > 0.5f * (levels[c] + levels[c + 1])) ++c;
    auto dist = [&](int k) { return std::fabs(normalized - levels[k]); };
    while (c > 0 && dist(c - 1) <= dist(c)) --c;
    while (c < 15 && dist(c + 1) < dist(c)) ++c;
    return static_cast<std::uint8_t>(c);
}

NF4QuantizedTensor NF4QuantizedTensor::from_parts(Shape shape, std::size_t block_size,
                                                  std::vector<std::uint8_t> packed,
                                                  std::vector<float> scales,
                                                  std::optional<DoubleQuantScales> dq) {
    if (block_size < 2) throw StructuralError("nf4 block size must be at least 2");
    NF4QuantizedTensor q;
    q.numel_ = shape_numel(shape);
    q.shape_ = std::move(shape);
    q.block_size_ = block_size;
    const std::size_t blocks = ceil_div(q.numel_, block_size);
    if (packed.size() != ceil_div(q.numel_, 2)) {
        throw StructuralError("nf4 packed code length " + std::to_string(packed.size()) +
                              " does not match " + std::to_string(q.numel_) + " elements");
    }
    if (q.numel_ % 2 == 1 && (packed.back() & 0xF0) != 0) {
        throw StructuralError("nf4 padding nibble is not zero");
    }
    q.packed_ = std::move(packed);
    if (dq) {
        const std::size_t groups = ceil_div(blocks, kScaleGroupBlocks);
        if (dq->codes.size() != blocks || dq->group_step.size() != groups ||
            dq->group_offset.size() != groups) {
            throw StructuralError("nf4 double-quantized scale table has wrong length");
        }
        q.scales_.resize(blocks);
        for (std::size_t b = 0; b < blocks; ++b) {
            const std::size_t g = b / kScaleGroupBlocks;
            q.scales_[b] = dq->group_offset[g] + static_cast<float>(dq->codes[b]) * dq->group_step[g];
        }
        q.dq_ = std::move(dq);
    } else {
        if (scales.size() != blocks) {
            throw StructuralError("nf4 scale count " + std::to_string(scales.size()) +
                                  " does not match " + std::to_string(blocks) + " blocks");
        }
        q.scales_ = std::move(scales);
    }
    for (float s : q.scales_) {
        if (!(s >= 0.0f) || !std::isfinite(s)) throw StructuralError("nf4 scale is negative or non-finite");
    }
    return q;
}

NF4QuantizedTensor quantize_nf4(const Tensor& t, std::size_t block_size) {
    if (t.empty()) throw std::invalid_argument("cannot quantize an empty tensor");
    if (block_size < 2) throw std::invalid_argument("nf4 block size must be at least 2");
    const auto values = t.values();
    if (auto bad = first_non_finite(values); bad != static_cast<std::size_t>(-1)) {
        throw QuantizationError("non-finite value at element " + std::to_string(bad), bad);
    }
    const auto& cb = nf4_codebook();
    const std::uint8_t zero = cb.zero_code();
    const std::size_t n = values.size();
    const std::size_t blocks = ceil_div(n, block_size);
    std::vector<std::uint8_t> packed(ceil_div(n, 2), 0);
    std::vector<float> scales(blocks, 0.0f);

    for (std::size_t b = 0; b < blocks; ++b) {
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(n, begin + block_size);
        float absmax = 0.0f;
        for (std::size_t i = begin; i < end; ++i) absmax = std::max(absmax, std::fabs(values[i]));
        scales[b] = absmax;
        for (std::size_t i = begin; i < end; ++i) {
            const std::uint8_t code = absmax == 0.0f ? zero : cb.nearest(values[i] / absmax);
            packed[i >> 1] |= static_cast<std::uint8_t>((i & 1) ? code << 4 : code);
        }
    }
    return NF4QuantizedTensor::from_parts(t.shape(), block_size, std::move(packed), std::move(scales),
                                          std::nullopt);
}

Tensor dequantize_nf4(const NF4QuantizedTensor& q) {
    const auto& levels = nf4_codebook().levels;
    std::vector<float> out(q.numel());
    const auto scales = q.scales();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = scales[i / q.block_size()] * levels[q.code(i)];
    }
    return Tensor(q.shape(), std::move(out));
}

DoubleQuantResult double_quantize_scales(const NF4QuantizedTensor& q) {
    if (q.double_quantized()) return {q, true};
    const auto scales = q.scales();
    const std::size_t blocks = scales.size();
    const std::size_t groups = ceil_div(blocks, kScaleGroupBlocks);
    DoubleQuantScales dq;
    dq.codes.resize(blocks);
    dq.group_step.resize(groups);
    dq.group_offset.resize(groups);
    for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t begin = g * kScaleGroupBlocks;
        const std::size_t end = std::min(blocks, begin + kScaleGroupBlocks);
        const auto [lo, hi] = std::minmax_element(scales.begin() + begin, scales.begin() + end);
        const float step = (*hi - *lo) / 255.0f;
        dq.group_offset[g] = *lo;
        dq.group_step[g] = step;
        for (std::size_t b = begin; b < end; ++b) {
            long code = 0;
            if (step > 0.0f) code = std::lround((scales[b] - *lo) / step);
            dq.codes[b] = static_cast<std::uint8_t>(std::clamp(code, 0L, 255L));
        }
    }
    std::vector<std::uint8_t> packed(q.packed_codes().begin(), q.packed_codes().end());
    return {NF4QuantizedTensor::from_parts(q.shape(), q.block_size(), std::move(packed), {},
                                           std::move(dq)),
            false};
}

namespace {

// Decodes the weights of row `o` into `out`, building a 16-entry value table per block.
void decode_row(const NF4QuantizedTensor& q, std::size_t o, std::size_t d_in, std::span<float> out) {
    const auto& levels = nf4_codebook().levels;
    const auto scales = q.scales();
    const std::size_t bs = q.block_size();
    const std::size_t first = o * d_in;
    std::size_t i = 0;
    std::array<float, 16> lut{};
    while (i < d_in) {
        const std::size_t e = first + i;
        const std::size_t b = e / bs;
        const std::size_t run = std::min(d_in - i, (b + 1) * bs - e);
        const float s = scales[b];
        for (std::size_t k = 0; k < 16; ++k) lut[k] = s * levels[k];
        for (std::size_t k = 0; k < run; ++k) out[i + k] = lut[q.code(e + k)];
        i += run;
    }
}

void check_matrix(const NF4QuantizedTensor& q, std::size_t d_in) {
    if (q.shape().size() != 2) throw ShapeError("nf4 matvec requires a 2-D weight");
    if (q.shape()[1] != d_in) {
        throw ShapeError("nf4 matvec inner dimension " + std::to_string(q.shape()[1]) +
                         " does not match input length " + std::to_string(d_in));
    }
}

}  // namespace

void matvec_nf4(const NF4QuantizedTensor& q, std::span<const float> x, std::span<float> y) {
    check_matrix(q, x.size());
    const std::size_t d_out = q.shape()[0];
    if (y.size() != d_out) throw ShapeError("nf4 matvec output length mismatch");
    std::vector<float> row(x.size());
    for (std::size_t o = 0; o < d_out; ++o) {
        decode_row(q, o, x.size(), row);
        y[o] = dot(row, x);
    }
}

Tensor matvec_nf4(const NF4QuantizedTensor& q, const Tensor& x) {
    if (x.rank() != 1) throw ShapeError("nf4 matvec input must be 1-D");
    check_matrix(q, x.numel());
    Tensor y({q.shape()[0]});
    matvec_nf4(q, x.values(), y.values());
    return y;
}

void matmul_transposed_nf4(std::span<const float> x, std::size_t tokens, const NF4QuantizedTensor& q,
                           std::span<float> y) {
    if (q.shape().size() != 2) throw ShapeError("nf4 matmul requires a 2-D weight");
    const std::size_t d_out = q.shape()[0];
    const std::size_t d_in = q.shape()[1];
    if (x.size() != tokens * d_in || y.size() != tokens * d_out) {
        throw ShapeError("nf4 matmul operand sizes do not agree");
    }
    std::vector<float> row(d_in);
    for (std::size_t o = 0; o < d_out; ++o) {
        decode_row(q, o, d_in, row);
        for (std::size_t t = 0; t < tokens; ++t) {
            y[t * d_out + o] = dot(x.subspan(t * d_in, d_in), row);
        }
    }
}

MemoryReport& MemoryReport::operator+=(const MemoryReport& other) {
    params += other.params;
    fp32_bytes += other.fp32_bytes;
    quantized_bytes += other.quantized_bytes;
    bits_per_parameter = params ? 8.0 * static_cast<double>(quantized_bytes) / static_cast<double>(params) : 0.0;
    reduction_fraction =
        fp32_bytes ? 1.0 - static_cast<double>(quantized_bytes) / static_cast<double>(fp32_bytes) : 0.0;
    return *this;
}

std::size_t nf4_payload_bytes(std::size_t numel, std::size_t block_size, bool double_quant) {
    const std::size_t blocks = ceil_div(numel, block_size);
    const std::size_t codes = ceil_div(numel, 2);
    if (!double_quant) return codes + 4 * blocks;
    const std::size_t groups = ceil_div(blocks, kScaleGroupBlocks);
    return codes + blocks + 8 * groups;
}

MemoryReport memory_footprint(const NF4QuantizedTensor& q) {
    MemoryReport r;
    r.params = q.numel();
    r.fp32_bytes = 4 * q.numel();
    r.quantized_bytes = nf4_payload_bytes(q.numel(), q.block_size(), q.double_quantized());
    r.bits_per_parameter = 8.0 * static_cast<double>(r.quantized_bytes) / static_cast<double>(r.params);
    r.reduction_fraction = 1.0 - static_cast<double>(r.quantized_bytes) / static_cast<double>(r.fp32_bytes);
    return r;
}

MemoryReport memory_footprint(const Tensor& t) {
    MemoryReport r;
    r.params = t.numel();
    r.fp32_bytes = 4 * t.numel();
    r.quantized_bytes = r.fp32_bytes;
    r.bits_per_parameter = t.numel() ? 32.0 : 0.0;
    r.reduction_fraction = 0.0;
    return r;
}

}  // namespace litevla
