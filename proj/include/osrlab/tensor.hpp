#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace osrlab {

// Dense row-major double tensor. Rank 0 (scalar), 1 (vector) and 2 (matrix)
// cover everything this library computes. Row-wise operations view a rank-1
// tensor of n elements as a 1 x n matrix.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor full(std::vector<std::size_t> s, double v) {
        std::size_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }
    static Tensor row(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }
    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor({r, c}, std::move(v));
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // canonical 2-D view
    std::size_t rows() const {
        if (shape.size() <= 1) return 1;
        if (shape.size() == 2) return shape[0];
        throw std::invalid_argument("Tensor: rank > 2 has no 2-D view");
    }
    std::size_t cols() const {
        if (shape.empty()) return 1;
        if (shape.size() == 1) return shape[0];
        if (shape.size() == 2) return shape[1];
        throw std::invalid_argument("Tensor: rank > 2 has no 2-D view");
    }

    double& at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    double item() const {
        if (numel() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
        return data[0];
    }
};

inline double dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a.data[i] * b.data[i];
    return s;
}

inline double l2_norm(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data) s += v * v;
    return std::sqrt(s);
}

inline double frobenius_norm(const Tensor& a) { return l2_norm(a); }

// Fixed-order pairwise summation; deterministic and better conditioned than
// a running sum for long score/norm lists.
double pairwise_sum(const double* x, std::size_t n);

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) throw std::invalid_argument("mean_of: empty input");
    return pairwise_sum(v.data(), v.size()) / static_cast<double>(v.size());
}

}  // namespace osrlab
