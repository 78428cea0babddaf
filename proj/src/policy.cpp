#include "litevla/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "litevla/rng.hpp"

namespace litevla {

namespace {

constexpr float kNormEps = 1e-5f;

void rmsnorm_forward(std::span<const float> h, std::size_t tokens, std::size_t d, const Tensor& gain,
                     std::span<float> out, std::span<float> inv_rms) {
    for (std::size_t t = 0; t < tokens; ++t) {
        const float* ht = h.data() + t * d;
        float ss = 0.0f;
        for (std::size_t i = 0; i < d; ++i) ss += ht[i] * ht[i];
        const float r = 1.0f / std::sqrt(ss / static_cast<float>(d) + kNormEps);
        inv_rms[t] = r;
        for (std::size_t i = 0; i < d; ++i) out[t * d + i] = ht[i] * r * gain[i];
    }
}

// Accumulates dL/dh into dh given dL/d(out).
void rmsnorm_backward(std::span<const float> h, std::size_t tokens, std::size_t d, const Tensor& gain,
                      std::span<const float> inv_rms, std::span<const float> dout, std::span<float> dh) {
    for (std::size_t t = 0; t < tokens; ++t) {
        const float* ht = h.data() + t * d;
        const float* gt = dout.data() + t * d;
        const float r = inv_rms[t];
        float proj = 0.0f;
        for (std::size_t i = 0; i < d; ++i) proj += gt[i] * gain[i] * ht[i];
        const float coef = r * r * r * proj / static_cast<float>(d);
        for (std::size_t i = 0; i < d; ++i) dh[t * d + i] += r * gt[i] * gain[i] - ht[i] * coef;
    }
}

float sigmoid(float x) { return 1.0f / (1.0f + std::exp(-x)); }

AdaptedLinear make_linear(std::size_t d_in, std::size_t d_out, Rng& rng, double stddev, bool bias) {
    AdaptedLinear l;
    l.base = Tensor::normal({d_out, d_in}, rng, stddev);
    if (bias) l.bias = Tensor::zeros({d_out});
    return l;
}

void attach_adapter(AdaptedLinear& l, const PolicyConfig& cfg, Rng& rng) {
    l.adapter = LoRAAdapter::create(l.d_in(), l.d_out(), cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout, rng);
}

}  // namespace

const char* precision_name(PrecisionMode m) {
    switch (m) {
        case PrecisionMode::FP32: return "fp32";
        case PrecisionMode::Hybrid: return "hybrid";
        case PrecisionMode::FullNF4: return "nf4";
    }
    return "unknown";
}

PrecisionMode precision_from_name(const std::string& name) {
    if (name == "fp32") return PrecisionMode::FP32;
    if (name == "hybrid") return PrecisionMode::Hybrid;
    if (name == "nf4") return PrecisionMode::FullNF4;
    throw std::invalid_argument("unknown precision mode '" + name + "' (expected fp32, hybrid or nf4)");
}

std::size_t PolicyConfig::tokens() const {
    const std::size_t side = image_size / shuffle_factor;
    return side * side;
}

std::size_t PolicyConfig::class_index(Verb v) const {
    for (std::size_t i = 0; i < action_vocab.size(); ++i) {
        if (action_vocab[i] == v) return i;
    }
    throw std::invalid_argument("verb '" + std::string(verb_name(v)) + "' is not in the action vocabulary");
}

void PolicyConfig::validate() const {
    if (channels != 3) throw std::invalid_argument("policy expects 3 image channels");
    if (shuffle_factor == 0 || image_size == 0 || image_size % shuffle_factor != 0) {
        throw std::invalid_argument("image_size must be divisible by shuffle_factor");
    }
    if (n_heads == 0 || d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
    if (n_layers == 0 || ffn_dim == 0) throw std::invalid_argument("n_layers and ffn_dim must be positive");
    if (action_vocab.size() < 2) throw std::invalid_argument("action_vocab needs at least 2 entries");
    if (std::find(action_vocab.begin(), action_vocab.end(), Verb::Stop) == action_vocab.end()) {
        throw std::invalid_argument("action_vocab must include stop");
    }
    for (std::size_t i = 0; i < action_vocab.size(); ++i) {
        for (std::size_t j = i + 1; j < action_vocab.size(); ++j) {
            if (action_vocab[i] == action_vocab[j]) throw std::invalid_argument("action_vocab has duplicates");
        }
        if (!action_table.contains(action_vocab[i])) {
            throw std::invalid_argument("action_table lacks an entry for " + std::string(verb_name(action_vocab[i])));
        }
    }
    if (!(default_duration > 0.0)) throw std::invalid_argument("default_duration must be positive");
    if (lora_rank == 0) throw std::invalid_argument("lora_rank must be positive");
    if (quant_block_size < 2) throw std::invalid_argument("quant_block_size must be at least 2");
}

nlohmann::json PolicyConfig::to_json() const {
    nlohmann::json j;
    j["image_size"] = image_size;
    j["channels"] = channels;
    j["shuffle_factor"] = shuffle_factor;
    j["d_model"] = d_model;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["ffn_dim"] = ffn_dim;
    j["action_vocab"] = nlohmann::json::array();
    for (Verb v : action_vocab) j["action_vocab"].push_back(std::string(verb_name(v)));
    j["action_table"] = nlohmann::json::object();
    for (const auto& [v, spec] : action_table) {
        nlohmann::json e;
        e["magnitude"] = spec.magnitude;
        if (spec.duration) e["duration"] = *spec.duration;
        j["action_table"][std::string(verb_name(v))] = e;
    }
    j["default_duration"] = default_duration;
    j["lora_rank"] = lora_rank;
    j["lora_alpha"] = lora_alpha;
    j["lora_dropout"] = lora_dropout;
    j["quant_block_size"] = quant_block_size;
    j["seed"] = seed;
    return j;
}

PolicyConfig PolicyConfig::from_json(const nlohmann::json& j) {
    PolicyConfig c;
    auto opt = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("image_size", c.image_size);
    opt("channels", c.channels);
    opt("shuffle_factor", c.shuffle_factor);
    opt("d_model", c.d_model);
    opt("n_layers", c.n_layers);
    opt("n_heads", c.n_heads);
    opt("ffn_dim", c.ffn_dim);
    opt("default_duration", c.default_duration);
    opt("lora_rank", c.lora_rank);
    opt("lora_alpha", c.lora_alpha);
    opt("lora_dropout", c.lora_dropout);
    opt("quant_block_size", c.quant_block_size);
    opt("seed", c.seed);
    auto verb = [](const std::string& name) {
        auto v = verb_from_name(name);
        if (!v) throw std::invalid_argument("unknown verb '" + name + "' in policy config");
        return *v;
    };
    if (j.contains("action_vocab")) {
        c.action_vocab.clear();
        for (const auto& v : j.at("action_vocab")) c.action_vocab.push_back(verb(v.get<std::string>()));
    }
    if (j.contains("action_table")) {
        c.action_table.clear();
        for (const auto& [name, e] : j.at("action_table").items()) {
            ActionSpec spec;
            spec.magnitude = e.at("magnitude").get<double>();
            if (e.contains("duration")) spec.duration = e.at("duration").get<double>();
            c.action_table[verb(name)] = spec;
        }
    }
    c.validate();
    return c;
}

std::size_t ActionLogits::argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

Tensor pixel_shuffle_tokenize(const SceneImage& img, std::size_t factor) {
    if (factor == 0 || img.height % factor != 0 || img.width % factor != 0) {
        throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is not divisible by shuffle factor " + std::to_string(factor));
    }
    const std::size_t gh = img.height / factor, gw = img.width / factor;
    const std::size_t dim = 3 * factor * factor;
    std::vector<float> out(gh * gw * dim);
    for (std::size_t i = 0; i < gh; ++i) {
        for (std::size_t j = 0; j < gw; ++j) {
            float* tok = out.data() + (i * gw + j) * dim;
            for (std::size_t dy = 0; dy < factor; ++dy) {
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        tok[(dy * factor + dx) * 3 + c] = img.at(i * factor + dy, j * factor + dx, c);
                    }
                }
            }
        }
    }
    return Tensor({gh * gw, dim}, std::move(out));
}

SceneImage pixel_unshuffle(const Tensor& tokens, std::size_t height, std::size_t width, std::size_t factor) {
    if (factor == 0 || height % factor != 0 || width % factor != 0) throw ShapeError("size not divisible by factor");
    const std::size_t gh = height / factor, gw = width / factor;
    const std::size_t dim = 3 * factor * factor;
    if (tokens.shape() != Shape{gh * gw, dim}) throw ShapeError("token tensor does not match image size");
    SceneImage img(height, width);
    for (std::size_t i = 0; i < gh; ++i) {
        for (std::size_t j = 0; j < gw; ++j) {
            const float* tok = tokens.data() + (i * gw + j) * dim;
            for (std::size_t dy = 0; dy < factor; ++dy) {
                for (std::size_t dx = 0; dx < factor; ++dx) {
                    for (std::size_t c = 0; c < 3; ++c) {
                        img.at(i * factor + dy, j * factor + dx, c) = tok[(dy * factor + dx) * 3 + c];
                    }
                }
            }
        }
    }
    return img;
}

Policy Policy::create(const PolicyConfig& cfg) {
    cfg.validate();
    Policy p;
    p.cfg_ = cfg;
    Rng rng(cfg.seed);
    const std::size_t d = cfg.d_model;
    const double sd = 1.0 / std::sqrt(static_cast<double>(d));
    p.embed_ = make_linear(cfg.token_dim(), d, rng, 1.0 / std::sqrt(static_cast<double>(cfg.token_dim())), true);
    p.pos_embed_ = Tensor::normal({cfg.tokens(), d}, rng, 0.5);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        TransformerBlock b;
        b.norm1 = Tensor({d}, std::vector<float>(d, 1.0f));
        b.q = make_linear(d, d, rng, sd, false);
        b.k = make_linear(d, d, rng, sd, false);
        b.v = make_linear(d, d, rng, sd, false);
        b.o = make_linear(d, d, rng, sd, false);
        b.norm2 = Tensor({d}, std::vector<float>(d, 1.0f));
        b.gate = make_linear(d, cfg.ffn_dim, rng, sd, false);
        b.up = make_linear(d, cfg.ffn_dim, rng, sd, false);
        b.down = make_linear(cfg.ffn_dim, d, rng, 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim)), false);
        p.blocks_.push_back(std::move(b));
    }
    p.final_norm_ = Tensor({d}, std::vector<float>(d, 1.0f));
    p.head_ = make_linear(d, cfg.action_vocab.size(), rng, sd, true);
    // Adapters draw from a separate stream so the base is independent of LoRA settings.
    Rng adapter_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    for (auto& b : p.blocks_) {
        for (AdaptedLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate}) attach_adapter(*l, cfg, adapter_rng);
    }
    return p;
}

PrecisionMode Policy::precision() const {
    bool any_nf4 = embed_.quantized();
    for (const auto& b : blocks_) {
        for (const AdaptedLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate, &b.up, &b.down}) any_nf4 |= l->quantized();
    }
    if (head_.quantized()) return PrecisionMode::FullNF4;
    return any_nf4 ? PrecisionMode::Hybrid : PrecisionMode::FP32;
}

struct Policy::Cache {
    struct Block {
        std::vector<float> h_in, a, q, k, v, probs, ctx, h_mid, m, gate, up, act;
        std::vector<float> rms1, rms2;
        LinearCache cq, ck, cv, co, cg, cu, cd;
    };
    std::vector<float> tokens;
    std::vector<Block> blocks;
    std::vector<float> h_final, rmsf, z, pooled;
};

std::vector<float> Policy::run(const SceneImage& img, Cache* cache, bool training, Rng* rng) const {
    if (img.height != cfg_.image_size || img.width != cfg_.image_size) {
        throw ShapeError("image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         ", policy expects " + std::to_string(cfg_.image_size));
    }
    const std::size_t T = cfg_.tokens();
    const std::size_t D = cfg_.d_model;
    const std::size_t H = cfg_.n_heads;
    const std::size_t dh = D / H;
    const std::size_t F = cfg_.ffn_dim;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    const Tensor tok = pixel_shuffle_tokenize(img, cfg_.shuffle_factor);
    std::vector<float> h(T * D);
    linear_forward(embed_, tok.values(), T, h, nullptr, false, nullptr);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += pos_embed_[i];

    std::vector<float> a(T * D), q(T * D), k(T * D), v(T * D), ctx(T * D), o(T * D), m(T * D);
    std::vector<float> probs(H * T * T), gate(T * F), up(T * F), act(T * F), down(T * D);
    std::vector<float> rms1(T), rms2(T);
    if (cache) cache->blocks.resize(blocks_.size());

    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        Cache::Block* bc = cache ? &cache->blocks[l] : nullptr;
        if (bc) bc->h_in = h;
        rmsnorm_forward(h, T, D, b.norm1, a, rms1);
        linear_forward(b.q, a, T, q, bc ? &bc->cq : nullptr, training, rng);
        linear_forward(b.k, a, T, k, bc ? &bc->ck : nullptr, training, rng);
        linear_forward(b.v, a, T, v, bc ? &bc->cv : nullptr, training, rng);

        std::fill(ctx.begin(), ctx.end(), 0.0f);
        for (std::size_t hd = 0; hd < H; ++hd) {
            const std::size_t off = hd * dh;
            for (std::size_t i = 0; i < T; ++i) {
                float* row = probs.data() + (hd * T + i) * T;
                std::span<const float> qi(q.data() + i * D + off, dh);
                float mx = -INFINITY;
                for (std::size_t j = 0; j < T; ++j) {
                    row[j] = att_scale * dot(qi, std::span<const float>(k.data() + j * D + off, dh));
                    mx = std::max(mx, row[j]);
                }
                float sum = 0.0f;
                for (std::size_t j = 0; j < T; ++j) {
                    row[j] = std::exp(row[j] - mx);
                    sum += row[j];
                }
                const float inv = 1.0f / sum;
                float* ci = ctx.data() + i * D + off;
                for (std::size_t j = 0; j < T; ++j) {
                    row[j] *= inv;
                    const float p = row[j];
                    const float* vj = v.data() + j * D + off;
                    for (std::size_t e = 0; e < dh; ++e) ci[e] += p * vj[e];
                }
            }
        }
        linear_forward(b.o, ctx, T, o, bc ? &bc->co : nullptr, training, rng);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += o[i];
        if (bc) {
            bc->a = a;
            bc->q = q;
            bc->k = k;
            bc->v = v;
            bc->probs = probs;
            bc->ctx = ctx;
            bc->rms1 = rms1;
            bc->h_mid = h;
        }

        rmsnorm_forward(h, T, D, b.norm2, m, rms2);
        linear_forward(b.gate, m, T, gate, bc ? &bc->cg : nullptr, training, rng);
        linear_forward(b.up, m, T, up, bc ? &bc->cu : nullptr, training, rng);
        for (std::size_t i = 0; i < act.size(); ++i) act[i] = gate[i] * sigmoid(gate[i]) * up[i];
        linear_forward(b.down, act, T, down, bc ? &bc->cd : nullptr, training, rng);
        for (std::size_t i = 0; i < h.size(); ++i) h[i] += down[i];
        if (bc) {
            bc->m = m;
            bc->gate = gate;
            bc->up = up;
            bc->act = act;
            bc->rms2 = rms2;
        }
    }

    std::vector<float> z(T * D), rmsf(T), pooled(D, 0.0f);
    rmsnorm_forward(h, T, D, final_norm_, z, rmsf);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < D; ++i) pooled[i] += z[t * D + i];
    }
    for (auto& x : pooled) x /= static_cast<float>(T);
    std::vector<float> logits(head_.d_out());
    linear_forward(head_, pooled, 1, logits, nullptr, false, nullptr);
    if (cache) {
        cache->h_final = std::move(h);
        cache->rmsf = std::move(rmsf);
        cache->z = std::move(z);
        cache->pooled = std::move(pooled);
    }
    return logits;
}

ActionLogits Policy::forward(const SceneImage& normalized) const {
    return ActionLogits{run(normalized, nullptr, false, nullptr)};
}

ActionLogits Policy::act(const SceneImage& raw) const {
    const SceneImage sized = resize_bilinear(raw, cfg_.image_size, cfg_.image_size);
    return forward(normalize(sized, stats_));
}

double Policy::forward_backward(const SceneImage& img, std::size_t label, Rng& rng, PolicyGradients& grads,
                                float weight) const {
    Cache cache;
    const std::vector<float> logits = run(img, &cache, true, &rng);
    if (label >= logits.size()) throw std::invalid_argument("label out of range");

    const float mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (float z : logits) sum += std::exp(static_cast<double>(z - mx));
    const double loss = -(static_cast<double>(logits[label] - mx) - std::log(sum));

    const std::size_t T = cfg_.tokens();
    const std::size_t D = cfg_.d_model;
    const std::size_t H = cfg_.n_heads;
    const std::size_t dh = D / H;
    const std::size_t F = cfg_.ffn_dim;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    std::vector<float> dlogits(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c) {
        const float p = static_cast<float>(std::exp(static_cast<double>(logits[c] - mx)) / sum);
        dlogits[c] = weight * (p - (c == label ? 1.0f : 0.0f));
    }
    // Head is frozen: only propagate to pooled features.
    std::vector<float> dpooled(D);
    {
        LinearCache none;
        linear_backward(head_, cache.pooled, dlogits, 1, none, dpooled, nullptr);
    }
    std::vector<float> dz(T * D);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < D; ++i) dz[t * D + i] = dpooled[i] / static_cast<float>(T);
    }
    std::vector<float> dh_buf(T * D, 0.0f);
    rmsnorm_backward(cache.h_final, T, D, final_norm_, cache.rmsf, dz, dh_buf);

    // grads are laid out per block as q, k, v, o, gate.
    auto grad_for = [&](std::size_t block, std::size_t slot) -> AdapterGradients* {
        return &grads[block * 5 + slot];
    };

    std::vector<float> dact(T * F), dgate(T * F), dup(T * F), dm(T * D), dtmp(T * D);
    std::vector<float> dctx(T * D), dq(T * D), dk(T * D), dv(T * D), da(T * D);
    for (std::size_t li = blocks_.size(); li-- > 0;) {
        const auto& b = blocks_[li];
        const auto& bc = cache.blocks[li];

        // MLP branch: h_out = h_mid + down(silu(gate) * up)
        linear_backward(b.down, bc.act, dh_buf, T, bc.cd, dact, nullptr);
        for (std::size_t i = 0; i < dact.size(); ++i) {
            const float g = bc.gate[i];
            const float s = sigmoid(g);
            const float silu = g * s;
            dup[i] = dact[i] * silu;
            dgate[i] = dact[i] * bc.up[i] * s * (1.0f + g * (1.0f - s));
        }
        linear_backward(b.gate, bc.m, dgate, T, bc.cg, dm, grad_for(li, 4));
        linear_backward(b.up, bc.m, dup, T, bc.cu, dtmp, nullptr);
        for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += dtmp[i];
        rmsnorm_backward(bc.h_mid, T, D, b.norm2, bc.rms2, dm, dh_buf);

        // Attention branch: h_mid = h_in + o(attn(a))
        linear_backward(b.o, bc.ctx, dh_buf, T, bc.co, dctx, grad_for(li, 3));
        std::fill(dq.begin(), dq.end(), 0.0f);
        std::fill(dk.begin(), dk.end(), 0.0f);
        std::fill(dv.begin(), dv.end(), 0.0f);
        std::vector<float> dp(T);
        for (std::size_t hd = 0; hd < H; ++hd) {
            const std::size_t off = hd * dh;
            for (std::size_t i = 0; i < T; ++i) {
                const float* p = bc.probs.data() + (hd * T + i) * T;
                std::span<const float> dci(dctx.data() + i * D + off, dh);
                float rowdot = 0.0f;
                for (std::size_t j = 0; j < T; ++j) {
                    dp[j] = dot(dci, std::span<const float>(bc.v.data() + j * D + off, dh));
                    rowdot += dp[j] * p[j];
                    float* dvj = dv.data() + j * D + off;
                    for (std::size_t e = 0; e < dh; ++e) dvj[e] += p[j] * dci[e];
                }
                float* dqi = dq.data() + i * D + off;
                const float* qi = bc.q.data() + i * D + off;
                for (std::size_t j = 0; j < T; ++j) {
                    const float ds = p[j] * (dp[j] - rowdot) * att_scale;
                    if (ds == 0.0f) continue;
                    const float* kj = bc.k.data() + j * D + off;
                    float* dkj = dk.data() + j * D + off;
                    for (std::size_t e = 0; e < dh; ++e) {
                        dqi[e] += ds * kj[e];
                        dkj[e] += ds * qi[e];
                    }
                }
            }
        }
        linear_backward(b.q, bc.a, dq, T, bc.cq, da, grad_for(li, 0));
        linear_backward(b.k, bc.a, dk, T, bc.ck, dtmp, grad_for(li, 1));
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dtmp[i];
        linear_backward(b.v, bc.a, dv, T, bc.cv, dtmp, grad_for(li, 2));
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += dtmp[i];
        rmsnorm_backward(bc.h_in, T, D, b.norm1, bc.rms1, da, dh_buf);
    }
    return loss;
}

std::vector<std::string> Policy::trainable_layer_names() const {
    std::vector<std::string> names;
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "blocks." + std::to_string(l) + ".";
        for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.o", "mlp.gate"}) names.push_back(p + n);
    }
    return names;
}

std::vector<AdaptedLinear*> Policy::trainable_layers() {
    std::vector<AdaptedLinear*> out;
    for (auto& b : blocks_) {
        for (AdaptedLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate}) out.push_back(l);
    }
    return out;
}

std::vector<const AdaptedLinear*> Policy::trainable_layers() const {
    std::vector<const AdaptedLinear*> out;
    for (const auto& b : blocks_) {
        for (const AdaptedLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate}) out.push_back(l);
    }
    return out;
}

PolicyGradients Policy::zero_gradients() const {
    PolicyGradients g;
    for (const AdaptedLinear* l : trainable_layers()) {
        if (!l->adapter) throw std::logic_error("policy has no adapters to train");
        g.push_back({Tensor::zeros(l->adapter->A.shape()), Tensor::zeros(l->adapter->B.shape())});
    }
    return g;
}

std::vector<std::pair<std::string, const AdaptedLinear*>> Policy::backbone_linears() const {
    std::vector<std::pair<std::string, const AdaptedLinear*>> out;
    out.emplace_back("embed", &embed_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        out.emplace_back(p + "attn.q", &b.q);
        out.emplace_back(p + "attn.k", &b.k);
        out.emplace_back(p + "attn.v", &b.v);
        out.emplace_back(p + "attn.o", &b.o);
        out.emplace_back(p + "mlp.gate", &b.gate);
        out.emplace_back(p + "mlp.up", &b.up);
        out.emplace_back(p + "mlp.down", &b.down);
    }
    return out;
}

namespace {

void put_linear(Checkpoint& ck, const std::string& name, const AdaptedLinear& l, nlohmann::json& lora_layers) {
    std::visit([&](const auto& w) { ck.put(name + ".weight", w); }, l.base);
    if (l.bias) ck.put(name + ".bias", *l.bias);
    if (l.adapter) {
        ck.put(name + ".lora_A", l.adapter->A);
        ck.put(name + ".lora_B", l.adapter->B);
        lora_layers.push_back(name);
    }
}

AdaptedLinear get_linear(const Checkpoint& ck, const std::string& name, const nlohmann::json& lora) {
    AdaptedLinear l;
    const auto& w = ck.get(name + ".weight");
    if (const auto* t = std::get_if<Tensor>(&w)) {
        l.base = *t;
    } else {
        l.base = std::get<NF4QuantizedTensor>(w);
    }
    if (ck.contains(name + ".bias")) l.bias = ck.get_fp32(name + ".bias");
    if (ck.contains(name + ".lora_A")) {
        LoRAAdapter a;
        a.A = ck.get_fp32(name + ".lora_A");
        a.B = ck.get_fp32(name + ".lora_B");
        a.rank = lora.at("rank").get<std::size_t>();
        a.alpha = lora.at("alpha").get<float>();
        a.dropout_p = lora.at("dropout_p").get<float>();
        l.adapter = std::move(a);
    }
    return l;
}

void expect_shape(const Shape& got, const Shape& want, const std::string& what) {
    if (got != want) {
        throw CheckpointError("checkpoint/config mismatch: " + what + " has shape " + shape_to_string(got) +
                              ", config implies " + shape_to_string(want));
    }
}

}  // namespace

Checkpoint Policy::to_checkpoint() const {
    Checkpoint ck;
    nlohmann::json lora_layers = nlohmann::json::array();
    put_linear(ck, "embed", embed_, lora_layers);
    ck.put("pos_embed", pos_embed_);
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const auto& b = blocks_[l];
        const std::string p = "blocks." + std::to_string(l) + ".";
        ck.put(p + "norm1", b.norm1);
        put_linear(ck, p + "attn.q", b.q, lora_layers);
        put_linear(ck, p + "attn.k", b.k, lora_layers);
        put_linear(ck, p + "attn.v", b.v, lora_layers);
        put_linear(ck, p + "attn.o", b.o, lora_layers);
        ck.put(p + "norm2", b.norm2);
        put_linear(ck, p + "mlp.gate", b.gate, lora_layers);
        put_linear(ck, p + "mlp.up", b.up, lora_layers);
        put_linear(ck, p + "mlp.down", b.down, lora_layers);
    }
    ck.put("final_norm", final_norm_);
    put_linear(ck, "head", head_, lora_layers);

    ck.metadata["format"] = "litevla-policy";
    ck.metadata["config"] = cfg_.to_json();
    ck.metadata["precision"] = precision_name(precision());
    ck.metadata["norm_stats"] = {{"mean", stats_.mean()}, {"std", stats_.stddev()}};
    ck.metadata["lora"] = {{"rank", cfg_.lora_rank},
                           {"alpha", cfg_.lora_alpha},
                           {"dropout_p", cfg_.lora_dropout},
                           {"layers", lora_layers}};
    return ck;
}

Policy Policy::from_checkpoint(const Checkpoint& ck) {
    if (ck.metadata.value("format", "") != "litevla-policy") {
        throw CheckpointError("checkpoint is not a litevla policy");
    }
    Policy p;
    try {
        p.cfg_ = PolicyConfig::from_json(ck.metadata.at("config"));
        const auto& ns = ck.metadata.at("norm_stats");
        p.stats_ = NormalizationStats(ns.at("mean").get<std::array<float, 3>>(), ns.at("std").get<std::array<float, 3>>());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint metadata incomplete: ") + e.what());
    }
    const auto& lora = ck.metadata.at("lora");
    const auto& cfg = p.cfg_;
    const std::size_t D = cfg.d_model;
    p.embed_ = get_linear(ck, "embed", lora);
    expect_shape({p.embed_.d_out(), p.embed_.d_in()}, {D, cfg.token_dim()}, "embed.weight");
    p.pos_embed_ = ck.get_fp32("pos_embed");
    expect_shape(p.pos_embed_.shape(), {cfg.tokens(), D}, "pos_embed");
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string pre = "blocks." + std::to_string(l) + ".";
        TransformerBlock b;
        b.norm1 = ck.get_fp32(pre + "norm1");
        b.q = get_linear(ck, pre + "attn.q", lora);
        b.k = get_linear(ck, pre + "attn.k", lora);
        b.v = get_linear(ck, pre + "attn.v", lora);
        b.o = get_linear(ck, pre + "attn.o", lora);
        b.norm2 = ck.get_fp32(pre + "norm2");
        b.gate = get_linear(ck, pre + "mlp.gate", lora);
        b.up = get_linear(ck, pre + "mlp.up", lora);
        b.down = get_linear(ck, pre + "mlp.down", lora);
        for (const auto* lin : {&b.q, &b.k, &b.v, &b.o}) {
            expect_shape({lin->d_out(), lin->d_in()}, {D, D}, pre + "attn");
        }
        expect_shape({b.gate.d_out(), b.gate.d_in()}, {cfg.ffn_dim, D}, pre + "mlp.gate");
        expect_shape({b.up.d_out(), b.up.d_in()}, {cfg.ffn_dim, D}, pre + "mlp.up");
        expect_shape({b.down.d_out(), b.down.d_in()}, {D, cfg.ffn_dim}, pre + "mlp.down");
        expect_shape(b.norm1.shape(), {D}, pre + "norm1");
        expect_shape(b.norm2.shape(), {D}, pre + "norm2");
        p.blocks_.push_back(std::move(b));
    }
    p.final_norm_ = ck.get_fp32("final_norm");
    expect_shape(p.final_norm_.shape(), {D}, "final_norm");
    p.head_ = get_linear(ck, "head", lora);
    expect_shape({p.head_.d_out(), p.head_.d_in()}, {cfg.action_vocab.size(), D}, "head.weight");
    return p;
}

Policy merge_adapters(const Policy& src) {
    Policy p = src;
    auto fold = [](AdaptedLinear& l) {
        if (!l.adapter) return;
        l.base = merge(l);
        l.adapter.reset();
    };
    fold(p.embed_);
    for (auto& b : p.blocks_) {
        for (AdaptedLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate, &b.up, &b.down}) fold(*l);
    }
    fold(p.head_);
    return p;
}

Policy quantize_policy(const Policy& src, PrecisionMode mode, bool double_quant) {
    if (src.precision() != PrecisionMode::FP32) {
        throw std::invalid_argument("policy already holds NF4 tensors; quantize from the fp32 checkpoint");
    }
    if (mode == PrecisionMode::FP32) return src;
    Policy p = merge_adapters(src);
    const std::size_t bs = p.cfg_.quant_block_size;
    auto quantize = [&](AdaptedLinear& l) {
        auto q = quantize_nf4(std::get<Tensor>(l.base), bs);
        if (double_quant) q = double_quantize_scales(q).tensor;
        l.base = std::move(q);
    };
    quantize(p.embed_);
    for (auto& b : p.blocks_) {
        for (AdaptedLinear* l : {&b.q, &b.k, &b.v, &b.o, &b.gate, &b.up, &b.down}) quantize(*l);
    }
    if (mode == PrecisionMode::FullNF4) quantize(p.head_);
    return p;
}

std::string decode_action(const ActionLogits& logits, const PolicyConfig& cfg) {
    if (logits.values.size() != cfg.action_vocab.size()) {
        throw std::invalid_argument("logit count does not match the action vocabulary");
    }
    const Verb verb = cfg.action_vocab[logits.argmax()];
    const ActionSpec& spec = cfg.action_table.at(verb);
    ActionCommand cmd;
    cmd.verb = verb;
    cmd.magnitude = verb == Verb::Stop ? 0.0 : spec.magnitude;
    cmd.duration = spec.duration.value_or(cfg.default_duration);
    return serialize_action(cmd);
}

PolicyMemory policy_memory(const Policy& p) {
    PolicyMemory mem;
    auto add = [](MemoryReport& r, const BaseWeight& w) {
        std::visit([&](const auto& t) { r += memory_footprint(t); }, w);
    };
    for (const auto& [name, l] : p.backbone_linears()) add(mem.backbone, l->base);
    const Checkpoint ck = p.to_checkpoint();
    for (const auto& [name, t] : ck.tensors()) {
        std::visit([&](const auto& v) { mem.whole += memory_footprint(v); }, t);
    }
    return mem;
}

}  // namespace litevla
