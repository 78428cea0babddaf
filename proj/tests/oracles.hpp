#pragma once

// Reference implementations kept deliberately naive: they share no code with
// the library beyond plain data types.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace oracle {

// Inverse standard normal CDF by bisection on erfc.
inline double normal_ppf(double p) {
    double lo = -12.0, hi = 12.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid; else hi = mid;
    }
    return 0.5 * (lo + hi);
}

// 8 positive and 7 negative quantiles over [0.5, offset], zero inserted,
// divided by the largest value.
inline std::array<double, 16> nf4_table() {
    const double offset = 0.5 * ((1.0 - 1.0 / 30.0) + (1.0 - 1.0 / 32.0));
    std::vector<double> v{0.0};
    for (int i = 0; i < 8; ++i) v.push_back(normal_ppf(offset + i * (0.5 - offset) / 8.0));
    for (int i = 0; i < 7; ++i) v.push_back(-normal_ppf(offset + i * (0.5 - offset) / 7.0));
    std::sort(v.begin(), v.end());
    const double m = v.back();
    std::array<double, 16> out{};
    for (int i = 0; i < 16; ++i) out[i] = v[i] / m;
    return out;
}

// Exhaustive nearest level; strict comparison keeps the lower index on ties.
inline std::uint8_t nearest_level(float normalized, std::span<const float> levels) {
    std::uint8_t best = 0;
    float best_d = std::fabs(normalized - levels[0]);
    for (std::size_t k = 1; k < levels.size(); ++k) {
        const float d = std::fabs(normalized - levels[k]);
        if (d < best_d) {
            best_d = d;
            best = static_cast<std::uint8_t>(k);
        }
    }
    return best;
}

inline std::size_t nf4_bytes(std::size_t n, std::size_t block, bool dq) {
    const std::size_t blocks = (n + block - 1) / block;
    const std::size_t codes = (n + 1) / 2;
    if (!dq) return codes + 4 * blocks;
    return codes + blocks + 8 * ((blocks + 255) / 256);
}

struct Match {
    std::size_t image;
    std::size_t action;
    std::int64_t delta;
};

// O(n*m): every image scans every action; earliest index wins ties.
inline std::vector<Match> synchronize(std::span<const std::int64_t> images, std::span<const std::int64_t> actions,
                                     std::int64_t tol, std::size_t& dropped) {
    std::vector<Match> out;
    dropped = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::optional<Match> best;
        for (std::size_t k = 0; k < actions.size(); ++k) {
            const std::int64_t d = images[i] > actions[k] ? images[i] - actions[k] : actions[k] - images[i];
            if (!best || d < best->delta) best = Match{i, k, d};
        }
        if (best && best->delta <= tol) out.push_back(*best); else ++dropped;
    }
    return out;
}

// y = W x + s * B (A x), computed in double.
template <typename T>
std::vector<double> lora_forward(std::span<const T> w, std::span<const T> a, std::span<const T> b,
                                        std::size_t d_in, std::size_t d_out, std::size_t rank, double scale,
                                        std::span<const double> x) {
    std::vector<double> ax(rank, 0.0), y(d_out, 0.0);
    for (std::size_t r = 0; r < rank; ++r)
        for (std::size_t i = 0; i < d_in; ++i) ax[r] += double(a[r * d_in + i]) * x[i];
    for (std::size_t o = 0; o < d_out; ++o) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d_in; ++i) acc += double(w[o * d_in + i]) * x[i];
        double low = 0.0;
        for (std::size_t r = 0; r < rank; ++r) low += double(b[o * rank + r]) * ax[r];
        y[o] = acc + scale * low;
    }
    return y;
}

}  // namespace oracle
