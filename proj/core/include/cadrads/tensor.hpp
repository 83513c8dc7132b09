// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "cadrads/error.hpp"

namespace cadrads::nn {

// Dense row-major tensor. Activations use N x C x H x W; token tensors
// use B x T x C. float for training, double for gradient verification.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), T{0});
    }
    Tensor(std::initializer_list<int> s) : Tensor(std::vector<int>(s)) {}

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    void zero() { std::fill(v.begin(), v.end(), T{0}); }

    // 4-d accessors (N,C,H,W)
    T& at4(int n, int c, int h, int w) {
        return v[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T at4(int n, int c, int h, int w) const {
        return v[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    // 3-d accessors (B,T,C)
    T& at3(int b, int t, int c) {
        return v[(static_cast<std::size_t>(b) * shape[1] + t) * shape[2] + c];
    }
    T at3(int b, int t, int c) const {
        return v[(static_cast<std::size_t>(b) * shape[1] + t) * shape[2] + c];
    }
    T& at2(int r, int c) { return v[static_cast<std::size_t>(r) * shape[1] + c]; }
    T at2(int r, int c) const { return v[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& where) {
    for (const T& x : t.v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw numeric_error("forward", "NonFiniteActivation at " + where);
        }
    }
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + ")";
}

}  // namespace cadrads::nn
