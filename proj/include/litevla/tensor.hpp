#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace litevla {

class Rng;

// Raised when a value or shape violates a documented invariant.
class InvariantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when operand dimensions do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major fp32 tensor. All stored values are finite.
class Tensor {
public:
    Tensor() = default;
    // Zero-filled tensor of the given shape.
    explicit Tensor(Shape shape);
    // Validates count and finiteness.
    Tensor(Shape shape, std::vector<float> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor normal(Shape shape, Rng& rng, double stddev);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return values_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    bool empty() const { return values_.empty(); }

    std::span<float> values() { return values_; }
    std::span<const float> values() const { return values_; }
    float* data() { return values_.data(); }
    const float* data() const { return values_.data(); }

    float& operator[](std::size_t i) { return values_[i]; }
    float operator[](std::size_t i) const { return values_[i]; }

    // 2-D access.
    float& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    float at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }
    std::span<const float> row(std::size_t r) const {
        return std::span<const float>(values_).subspan(r * shape_[1], shape_[1]);
    }
    std::span<float> row(std::size_t r) {
        return std::span<float>(values_).subspan(r * shape_[1], shape_[1]);
    }

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<float> values_;
};

// Index of the first non-finite value, or npos.
std::size_t first_non_finite(std::span<const float> values);

// y[o] = sum_i w[o, i] * x[i] for a 2-D weight [d_out, d_in].
void matvec(const Tensor& w, std::span<const float> x, std::span<float> y);

// Y[t, o] = sum_i X[t, i] * W[o, i] for row-major X [tokens, d_in].
void matmul_transposed(std::span<const float> x, std::size_t tokens, const Tensor& w,
                       std::span<float> y);

float dot(std::span<const float> a, std::span<const float> b);

}  // namespace litevla
