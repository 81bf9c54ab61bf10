#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dni/error.hpp"

namespace dni {

/// Dense row-major float32 tensor. Convolution weights are stored as
/// [out_channels, in_channels, kernel_h, kernel_w]; activations as [n, c, h, w].
class Tensor {
public:
    Tensor() = default;

    Tensor(std::vector<std::int64_t> shape, std::vector<float> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != checked_numel(shape_)) {
            throw Error("tensor data length does not match shape");
        }
    }

    static Tensor zeros(const std::vector<std::int64_t>& shape) {
        Tensor t;
        t.shape_ = shape;
        t.data_.assign(static_cast<std::size_t>(checked_numel(shape)), 0.0f);
        return t;
    }

    const std::vector<std::int64_t>& shape() const { return shape_; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    float& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    float operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // [n, c, h, w] accessors for activation tensors.
    std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }

    float& at4(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(((n * dim(1) + c) * dim(2) + y) * dim(3) + x)];
    }
    float at4(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(((n * dim(1) + c) * dim(2) + y) * dim(3) + x)];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    static std::string shape_str(const std::vector<std::int64_t>& shape) {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

private:
    static std::int64_t checked_numel(const std::vector<std::int64_t>& shape) {
        if (shape.empty()) throw Error("tensor shape must have at least one dimension");
        std::int64_t n = 1;
        for (std::int64_t d : shape) {
            if (d < 1) throw Error("tensor dimensions must be positive, got " + shape_str(shape));
            n *= d;
        }
        return n;
    }

    std::vector<std::int64_t> shape_;
    std::vector<float> data_;
};

inline Tensor zeros(const std::vector<std::int64_t>& shape) { return Tensor::zeros(shape); }

/// Elementwise a*x + y. Intermediate arithmetic in double; overflow to
/// non-finite values is an error rather than a silent Inf.
inline Tensor axpy(double a, const Tensor& x, const Tensor& y) {
    if (!std::isfinite(a)) throw Error("axpy: coefficient must be finite");
    if (!x.same_shape(y)) {
        throw Error("axpy: shape mismatch " + Tensor::shape_str(x.shape()) + " vs " +
                    Tensor::shape_str(y.shape()));
    }
    Tensor out = Tensor::zeros(x.shape());
    const std::int64_t n = x.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const float v = static_cast<float>(a * static_cast<double>(x[i]) + static_cast<double>(y[i]));
        if (!std::isfinite(v)) throw Error("axpy: non-finite result at element " + std::to_string(i));
        out[i] = v;
    }
    return out;
}

struct TensorStats {
    double mean = 0.0;
    double l2norm_centered = 0.0;
};

/// Mean and Euclidean norm of (x - mean), both accumulated in double.
inline TensorStats stats(const Tensor& x) {
    if (x.empty()) throw Error("stats: empty tensor");
    const std::int64_t n = x.numel();
    double sum = 0.0;
    for (std::int64_t i = 0; i < n; ++i) sum += static_cast<double>(x[i]);
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(x[i]) - mean;
        sq += d * d;
    }
    return {mean, std::sqrt(sq)};
}

} // namespace dni
