#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "common.hpp"

namespace interpoll {

// Dense rank-1 or rank-2 array of doubles with an optional gradient buffer of
// the same length. Gradients are lazily allocated and accumulate with +=.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), values_(count(shape_), 0.0) {
        check_rank();
    }

    Tensor(std::vector<std::size_t> shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        check_rank();
        if (values_.size() != count(shape_))
            fail("Tensor: shape ", shape_str(shape_), " expects ", count(shape_),
                 " values, got ", values_.size());
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor zeros_like(const Tensor& t) {
        return Tensor(std::vector<std::size_t>(t.shape_.begin(), t.shape_.end()));
    }

    std::span<const std::size_t> shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    // Row-major element access for rank-2 tensors.
    double& at(std::size_t r, std::size_t c) { return values_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return values_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool has_grad() const { return !grad_.empty(); }

    // Gradient buffer, zero-initialized on first touch.
    std::vector<double>& grad() {
        if (grad_.empty()) grad_.assign(values_.size(), 0.0);
        return grad_;
    }
    const std::vector<double>& grad() const { return grad_; }

    void clear_grad() { grad_.clear(); }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    void check_rank() const {
        if (shape_.empty() || shape_.size() > 2)
            fail("Tensor: rank must be 1 or 2, got shape ", shape_str(shape_));
        for (std::size_t d : shape_)
            if (d == 0) fail("Tensor: zero-sized dimension in ", shape_str(shape_));
    }

    std::vector<std::size_t> shape_;
    std::vector<double> values_;
    std::vector<double> grad_;
};

}  // namespace interpoll
