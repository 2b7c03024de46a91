#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "fs2ffpe/errors.hpp"

namespace fs2ffpe {

// Dense row-major tensor. Rank is dynamic; images are [C,H,W], conv weights
// [Cout,Cin,Kh,Kw], feature matrices [N,D], scalars {1}.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("tensor dimension must be positive");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<int> s, T value) { return Tensor(std::move(s), value); }
    static Tensor scalar(T value) { return Tensor({1}, value); }

    std::size_t numel() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    // [C,H,W] accessors
    T& at(int c, int y, int x) {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    T at(int c, int y, int x) const {
        return v[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // [N,D] accessors
    T& at(int r, int c) { return v[static_cast<std::size_t>(r) * shape[1] + c]; }
    T at(int r, int c) const { return v[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T x : v)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    T min() const { return *std::min_element(v.begin(), v.end()); }
    T max() const { return *std::max_element(v.begin(), v.end()); }

    double sum() const {
        double s = 0;
        for (T x : v) s += static_cast<double>(x);
        return s;
    }
    double mean() const { return sum() / static_cast<double>(numel()); }
    double sum_sq() const {
        double s = 0;
        for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
        return s;
    }
    double norm() const { return std::sqrt(sum_sq()); }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }
};

template <typename T>
void require_shape(const Tensor<T>& t, const std::vector<int>& s, const char* what) {
    if (t.shape != s) {
        Tensor<T> want;
        want.shape = s;
        throw ShapeError(std::string(what) + ": expected shape " + want.shape_str() + ", got " +
                         t.shape_str());
    }
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i])));
    return m;
}

template <typename T>
double mean_abs_diff_value(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("mean_abs_diff: shape mismatch");
    double s = 0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        s += std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]));
    return s / static_cast<double>(a.numel());
}

}  // namespace fs2ffpe
