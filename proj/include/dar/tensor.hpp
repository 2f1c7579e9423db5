#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <vector>

#include "dar/common.hpp"

namespace dar {

// Dense row-major tensor. Rank is dynamic (0..4 used in practice); rank-0
// tensors hold a single scalar.
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }
    Tensor(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        check_arg(static_cast<int64_t>(data.size()) == numel_of(shape), "tensor data/shape mismatch");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int64_t> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(T v) {
        Tensor t;
        t.shape = {};
        t.data = {v};
        return t;
    }

    static Tensor randn(std::vector<int64_t> s, Rng& rng, T stddev = T(1)) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor uniform(std::vector<int64_t> s, Rng& rng, T lo, T hi) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& at(int64_t i) const { return data[static_cast<size_t>(i)]; }

    // flat index for [i, j] in a rank-2 tensor, [b, i, j] in rank-3, etc.
    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& at3(int64_t b, int64_t i, int64_t j) {
        return data[static_cast<size_t>((b * shape[1] + i) * shape[2] + j)];
    }
    const T& at3(int64_t b, int64_t i, int64_t j) const {
        return data[static_cast<size_t>((b * shape[1] + i) * shape[2] + j)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor<T> reshaped(std::vector<int64_t> s) const {
        check_arg(numel_of(s) == numel(), "reshape: element count mismatch");
        Tensor<T> t;
        t.shape = std::move(s);
        t.data = data;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
        return t;
    }
};

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    check_arg(a.same_shape(b), "max_abs_diff: shape mismatch");
    T m = T(0);
    for (size_t i = 0; i < a.data.size(); ++i) {
        T d = std::abs(a.data[i] - b.data[i]);
        if (d > m) m = d;
    }
    return m;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) return false;
    for (size_t i = 0; i < a.data.size(); ++i) {
        if (std::memcmp(&a.data[i], &b.data[i], sizeof(T)) != 0) return false;
    }
    return true;
}

}  // namespace dar
