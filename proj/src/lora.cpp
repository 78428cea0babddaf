#include "litevla/lora.hpp"

#include <stdexcept>
#include <string>

#include "litevla/rng.hpp"

namespace litevla {

namespace {

const Shape& base_shape(const BaseWeight& base) {
    return std::visit([](const auto& w) -> const Shape& { return w.shape(); }, base);
}

void check_layer(const AdaptedLinear& layer) {
    const auto& s = base_shape(layer.base);
    if (s.size() != 2) throw ShapeError("linear base weight must be 2-D");
    if (layer.adapter) {
        const auto& a = *layer.adapter;
        if (a.A.shape() != Shape{a.rank, s[1]} || a.B.shape() != Shape{s[0], a.rank}) {
            throw ShapeError("adapter shapes " + shape_to_string(a.A.shape()) + ", " +
                             shape_to_string(a.B.shape()) + " do not fit base " + shape_to_string(s));
        }
    }
    if (layer.bias && layer.bias->numel() != s[0]) throw ShapeError("bias length does not match d_out");
}

// Decodes row o of the base weight into `row`.
void base_row(const BaseWeight& base, std::size_t o, std::span<float> row) {
    if (const auto* w = std::get_if<Tensor>(&base)) {
        auto src = w->row(o);
        std::copy(src.begin(), src.end(), row.begin());
        return;
    }
    const auto& q = std::get<NF4QuantizedTensor>(base);
    const auto& levels = nf4_codebook().levels;
    const std::size_t d_in = row.size();
    for (std::size_t i = 0; i < d_in; ++i) {
        const std::size_t e = o * d_in + i;
        row[i] = q.scales()[e / q.block_size()] * levels[q.code(e)];
    }
}

}  // namespace

LoRAAdapter LoRAAdapter::create(std::size_t d_in, std::size_t d_out, std::size_t rank, float alpha,
                                float dropout_p, Rng& rng, double init_std) {
    if (rank == 0) throw std::invalid_argument("LoRA rank must be positive");
    if (!(alpha >= 0.0f)) throw std::invalid_argument("LoRA alpha must be non-negative");
    if (!(dropout_p >= 0.0f && dropout_p < 1.0f)) throw std::invalid_argument("LoRA dropout must be in [0, 1)");
    LoRAAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    a.dropout_p = dropout_p;
    a.A = Tensor::normal({rank, d_in}, rng, init_std);
    a.B = Tensor::zeros({d_out, rank});
    return a;
}

std::size_t AdaptedLinear::d_in() const { return base_shape(base).at(1); }
std::size_t AdaptedLinear::d_out() const { return base_shape(base).at(0); }

void base_matmul(const BaseWeight& base, std::span<const float> x, std::size_t tokens, std::span<float> y) {
    if (const auto* w = std::get_if<Tensor>(&base)) {
        matmul_transposed(x, tokens, *w, y);
    } else {
        matmul_transposed_nf4(x, tokens, std::get<NF4QuantizedTensor>(base), y);
    }
}

void linear_forward(const AdaptedLinear& layer, std::span<const float> x, std::size_t tokens,
                    std::span<float> y, LinearCache* cache, bool training, Rng* rng) {
    check_layer(layer);
    const std::size_t d_in = layer.d_in();
    const std::size_t d_out = layer.d_out();
    if (x.size() != tokens * d_in || y.size() != tokens * d_out) {
        throw ShapeError("linear input has " + std::to_string(x.size()) + " values, expected " +
                         std::to_string(tokens * d_in));
    }
    base_matmul(layer.base, x, tokens, y);
    if (layer.bias) {
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t o = 0; o < d_out; ++o) y[t * d_out + o] += (*layer.bias)[o];
        }
    }
    if (!layer.adapter) return;
    const auto& ad = *layer.adapter;
    const std::size_t r = ad.rank;

    std::span<const float> branch_in = x;
    std::vector<float> dropped;
    std::vector<std::uint8_t> keep;
    if (training && ad.dropout_p > 0.0f) {
        if (!rng) throw std::invalid_argument("dropout requires a random source");
        dropped.resize(x.size());
        keep.resize(x.size());
        const float inv_keep = 1.0f / (1.0f - ad.dropout_p);
        for (std::size_t i = 0; i < x.size(); ++i) {
            keep[i] = rng->uniform() >= ad.dropout_p ? 1 : 0;
            dropped[i] = keep[i] ? x[i] * inv_keep : 0.0f;
        }
        branch_in = dropped;
    }
    std::vector<float> u(tokens * r);
    matmul_transposed(branch_in, tokens, ad.A, u);
    const float s = ad.scaling();
    std::vector<float> su(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) su[i] = s * u[i];
    for (std::size_t t = 0; t < tokens; ++t) {
        std::span<const float> ut(su.data() + t * r, r);
        for (std::size_t o = 0; o < d_out; ++o) y[t * d_out + o] += dot(ad.B.row(o), ut);
    }
    if (cache) {
        cache->adapter_input = std::move(dropped);
        cache->keep = std::move(keep);
        cache->low_rank = std::move(u);
    }
}

void linear_backward(const AdaptedLinear& layer, std::span<const float> x, std::span<const float> dy,
                     std::size_t tokens, const LinearCache& cache, std::span<float> dx,
                     AdapterGradients* grads) {
    const std::size_t d_in = layer.d_in();
    const std::size_t d_out = layer.d_out();
    std::fill(dx.begin(), dx.end(), 0.0f);
    std::vector<float> row(d_in);
    for (std::size_t o = 0; o < d_out; ++o) {
        base_row(layer.base, o, row);
        for (std::size_t t = 0; t < tokens; ++t) {
            const float g = dy[t * d_out + o];
            if (g == 0.0f) continue;
            float* dxt = dx.data() + t * d_in;
            for (std::size_t i = 0; i < d_in; ++i) dxt[i] += g * row[i];
        }
    }
    if (!layer.adapter) return;
    const auto& ad = *layer.adapter;
    const std::size_t r = ad.rank;
    const float s = ad.scaling();
    const bool dropped = !cache.adapter_input.empty();
    std::span<const float> branch_in = dropped ? std::span<const float>(cache.adapter_input) : x;

    // du[t] = s * B^T dy[t]
    std::vector<float> du(tokens * r, 0.0f);
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t o = 0; o < d_out; ++o) {
            const float g = s * dy[t * d_out + o];
            if (g == 0.0f) continue;
            auto brow = ad.B.row(o);
            for (std::size_t k = 0; k < r; ++k) du[t * r + k] += g * brow[k];
        }
    }
    if (grads) {
        for (std::size_t o = 0; o < d_out; ++o) {
            for (std::size_t k = 0; k < r; ++k) {
                float acc = 0.0f;
                for (std::size_t t = 0; t < tokens; ++t) acc += dy[t * d_out + o] * cache.low_rank[t * r + k];
                grads->dB.at(o, k) += s * acc;
            }
        }
        for (std::size_t k = 0; k < r; ++k) {
            auto dArow = grads->dA.row(k);
            for (std::size_t t = 0; t < tokens; ++t) {
                const float g = du[t * r + k];
                if (g == 0.0f) continue;
                const float* xt = branch_in.data() + t * d_in;
                for (std::size_t i = 0; i < d_in; ++i) dArow[i] += g * xt[i];
            }
        }
    }
    const float inv_keep = dropped ? 1.0f / (1.0f - ad.dropout_p) : 1.0f;
    for (std::size_t t = 0; t < tokens; ++t) {
        float* dxt = dx.data() + t * d_in;
        for (std::size_t k = 0; k < r; ++k) {
            const float g = du[t * r + k];
            if (g == 0.0f) continue;
            auto arow = ad.A.row(k);
            if (dropped) {
                const std::uint8_t* keep = cache.keep.data() + t * d_in;
                for (std::size_t i = 0; i < d_in; ++i) dxt[i] += keep[i] ? g * arow[i] * inv_keep : 0.0f;
            } else {
                for (std::size_t i = 0; i < d_in; ++i) dxt[i] += g * arow[i];
            }
        }
    }
}

std::vector<float> adapter_forward(const AdaptedLinear& layer, std::span<const float> x, bool training,
                                   Rng* rng) {
    check_layer(layer);
    if (x.size() != layer.d_in()) {
        throw ShapeError("adapter input length " + std::to_string(x.size()) + " does not match d_in " +
                         std::to_string(layer.d_in()));
    }
    std::vector<float> y(layer.d_out());
    linear_forward(layer, x, 1, y, nullptr, training, rng);
    return y;
}

Tensor merge(const AdaptedLinear& layer) {
    check_layer(layer);
    Tensor w = std::holds_alternative<Tensor>(layer.base) ? std::get<Tensor>(layer.base)
                                                         : dequantize_nf4(std::get<NF4QuantizedTensor>(layer.base));
    if (!layer.adapter) return w;
    const auto& ad = *layer.adapter;
    const float s = ad.scaling();
    const std::size_t d_out = w.dim(0);
    const std::size_t d_in = w.dim(1);
    for (std::size_t o = 0; o < d_out; ++o) {
        for (std::size_t i = 0; i < d_in; ++i) {
            float acc = 0.0f;
            for (std::size_t k = 0; k < ad.rank; ++k) acc += ad.B.at(o, k) * ad.A.at(k, i);
            w.at(o, i) += s * acc;
        }
    }
    return w;
}

AdapterGradients adapter_gradients(const AdaptedLinear& layer, std::span<const float> x,
                                   std::span<const float> upstream) {
    check_layer(layer);
    if (!layer.adapter) throw std::invalid_argument("layer has no adapter");
    if (x.size() != layer.d_in() || upstream.size() != layer.d_out()) {
        throw ShapeError("adapter_gradients operand sizes do not agree");
    }
    const auto& ad = *layer.adapter;
    AdapterGradients g{Tensor::zeros(ad.A.shape()), Tensor::zeros(ad.B.shape())};
    LinearCache cache;
    cache.low_rank.resize(ad.rank);
    matvec(ad.A, x, cache.low_rank);
    std::vector<float> dx(x.size());
    linear_backward(layer, x, upstream, 1, cache, dx, &g);
    return g;
}

}  // namespace litevla
