#include "litevla/tensor.hpp"

#include <cmath>
#include <sstream>

#include "litevla/rng.hpp"

namespace litevla {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t first_non_finite(std::span<const float> values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) return i;
    }
    return static_cast<std::size_t>(-1);
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), values_(shape_numel(shape_), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_numel(shape_) != values_.size()) {
        throw InvariantError("tensor shape " + shape_to_string(shape_) + " holds " +
                             std::to_string(shape_numel(shape_)) + " values, got " +
                             std::to_string(values_.size()));
    }
    if (auto bad = first_non_finite(values_); bad != static_cast<std::size_t>(-1)) {
        throw InvariantError("tensor value at index " + std::to_string(bad) + " is not finite");
    }
}

Tensor Tensor::normal(Shape shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values_) v = static_cast<float>(rng.normal(0.0, stddev));
    return t;
}

float dot(std::span<const float> a, std::span<const float> b) {
    const std::size_t n = a.size();
    float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    }
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) +
           tail;
}

void matvec(const Tensor& w, std::span<const float> x, std::span<float> y) {
    const std::size_t rows = w.dim(0);
    for (std::size_t o = 0; o < rows; ++o) y[o] = dot(w.row(o), x);
}

void matmul_transposed(std::span<const float> x, std::size_t tokens, const Tensor& w,
                       std::span<float> y) {
    const std::size_t d_out = w.dim(0);
    const std::size_t d_in = w.dim(1);
    for (std::size_t o = 0; o < d_out; ++o) {
        auto wrow = w.row(o);
        for (std::size_t t = 0; t < tokens; ++t) {
            y[t * d_out + o] = dot(x.subspan(t * d_in, d_in), wrow);
        }
    }
}

}  // namespace litevla
