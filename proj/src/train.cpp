#include "litevla/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "litevla/rng.hpp"

namespace litevla {

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("learning_rate must be finite and non-negative");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

nlohmann::json TrainConfig::to_json() const {
    return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"epochs", epochs}, {"seed", seed},
            {"beta1", beta1},                 {"beta2", beta2},           {"epsilon", epsilon}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.validate();
    return c;
}

AdamOptimizer::AdamOptimizer(const Policy& policy, const TrainConfig& cfg) : cfg_(cfg) {
    for (const AdaptedLinear* l : policy.trainable_layers()) {
        if (!l->adapter) throw std::invalid_argument("policy layer has no adapter to optimise");
        m_.emplace_back(l->adapter->A.numel() + l->adapter->B.numel(), 0.0f);
        v_.emplace_back(m_.back().size(), 0.0f);
    }
}

void AdamOptimizer::step(Policy& policy, const PolicyGradients& grads) {
    auto layers = policy.trainable_layers();
    if (grads.size() != layers.size()) throw std::invalid_argument("gradient count does not match adapters");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const float b1 = static_cast<float>(cfg_.beta1);
    const float b2 = static_cast<float>(cfg_.beta2);
    const float lr_t = static_cast<float>(cfg_.learning_rate * std::sqrt(bc2) / bc1);
    const float eps_t = static_cast<float>(cfg_.epsilon * std::sqrt(bc2));
    for (std::size_t li = 0; li < layers.size(); ++li) {
        LoRAAdapter& ad = *layers[li]->adapter;
        auto& m = m_[li];
        auto& v = v_[li];
        auto update = [&](std::span<float> w, std::span<const float> g, std::size_t off) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const float gi = g[i];
                m[off + i] = b1 * m[off + i] + (1.0f - b1) * gi;
                v[off + i] = b2 * v[off + i] + (1.0f - b2) * gi * gi;
                w[i] -= lr_t * m[off + i] / (std::sqrt(v[off + i]) + eps_t);
            }
        };
        update(std::span<float>(ad.A.data(), ad.A.numel()), grads[li].dA.values(), 0);
        update(std::span<float>(ad.B.data(), ad.B.numel()), grads[li].dB.values(), ad.A.numel());
    }
}

EvalResult evaluate(const Policy& policy, std::span<const LabeledImage> samples) {
    EvalResult r;
    if (samples.empty()) return r;
    std::size_t correct = 0;
    double loss = 0.0;
    for (const auto& s : samples) {
        const ActionLogits lg = policy.forward(s.image);
        const float mx = *std::max_element(lg.values.begin(), lg.values.end());
        double sum = 0.0;
        for (float z : lg.values) sum += std::exp(static_cast<double>(z - mx));
        loss += std::log(sum) - static_cast<double>(lg.values.at(s.label) - mx);
        const std::size_t pred = lg.argmax();
        r.predictions.push_back(pred);
        if (pred == s.label) ++correct;
    }
    r.loss = loss / static_cast<double>(samples.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
    return r;
}

TrainResult train(Policy& policy, std::span<const LabeledImage> train_set, std::span<const LabeledImage> val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("training set is empty");
    const std::size_t classes = policy.config().action_vocab.size();
    for (const auto& s : train_set) {
        if (s.label >= classes) throw std::invalid_argument("training label out of range");
    }
    AdamOptimizer opt(policy, cfg);
    Rng rng(cfg.seed);
    std::vector<std::size_t> order(train_set.size());
    TrainResult result;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const float weight = 1.0f / static_cast<float>(end - start);
            PolicyGradients grads = policy.zero_gradients();
            double batch_loss = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& s = train_set[order[i]];
                batch_loss += policy.forward_backward(s.image, s.label, rng, grads, weight);
            }
            if (!std::isfinite(batch_loss)) {
                std::ostringstream msg;
                msg << "training loss became non-finite at epoch " << epoch + 1 << ", step " << opt.steps() + 1
                    << " (learning_rate=" << cfg.learning_rate
                    << "); lower the learning rate, e.g. to " << cfg.learning_rate / 10.0;
                throw TrainingError(msg.str());
            }
            opt.step(policy, grads);
            epoch_loss += batch_loss;
        }
        EpochStats st;
        st.train_loss = epoch_loss / static_cast<double>(order.size());
        if (!val_set.empty()) {
            const EvalResult ev = evaluate(policy, val_set);
            st.val_loss = ev.loss;
            st.val_accuracy = ev.accuracy;
        }
        result.epochs.push_back(st);
        if (on_epoch) on_epoch(epoch, st);
    }
    result.steps = opt.steps();
    return result;
}

}  // namespace litevla
