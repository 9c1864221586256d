#pragma once

// Dense row-major tensor of doubles. All numeric state in the library
// (images, masks, network parameters, gradients) lives in this type.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace udaseg {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill_value = 0.0)
        : shape_(std::move(shape)), data_(count(shape_), fill_value) {}

    Tensor(std::initializer_list<std::size_t> shape, double fill_value = 0.0)
        : Tensor(std::vector<std::size_t>(shape), fill_value) {}

    static Tensor scalar(double v) {
        Tensor t(std::vector<std::size_t>{});
        t.data_.assign(1, v);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2D (H, W)
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

    // 3D (C, H, W)
    double& at(std::size_t c, std::size_t i, std::size_t j) {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }
    double at(std::size_t c, std::size_t i, std::size_t j) const {
        return data_[(c * shape_[1] + i) * shape_[2] + j];
    }

    // 4D (N, C, H, W)
    double& at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) {
        return data_[((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }
    double at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
        return data_[((n * shape_[1] + c) * shape_[2] + i) * shape_[3] + j];
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ", ";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline double sum(const Tensor& t) {
    double acc = 0.0;
    for (double v : t.vec()) acc += v;
    return acc;
}

inline double mean(const Tensor& t) {
    if (t.numel() == 0) throw std::invalid_argument("mean of empty tensor");
    return sum(t) / static_cast<double>(t.numel());
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.vec())
        if (!std::isfinite(v)) return false;
    return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace udaseg
