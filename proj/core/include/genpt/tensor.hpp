#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace genpt {

// Dense row-major tensor. Plain value type: copyable, no strides, no views.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(count(shape), T(0)) {}
    Tensor(std::vector<int> s, T fill) : shape(std::move(s)), v(count(shape), fill) {}

    static int64_t count(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dim");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return int64_t(v.size()); }
    int rank() const { return int(shape.size()); }
    int dim(int i) const { return shape[size_t(i < 0 ? i + rank() : i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](int64_t i) { return v[size_t(i)]; }
    const T& operator[](int64_t i) const { return v[size_t(i)]; }

    T& at(int i, int j) { return v[size_t(i) * shape[1] + j]; }
    const T& at(int i, int j) const { return v[size_t(i) * shape[1] + j]; }
    T& at(int i, int j, int k) { return v[(size_t(i) * shape[1] + j) * shape[2] + k]; }
    const T& at(int i, int j, int k) const { return v[(size_t(i) * shape[1] + j) * shape[2] + k]; }
    T& at(int i, int j, int k, int l) {
        return v[((size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }
    const T& at(int i, int j, int k, int l) const {
        return v[((size_t(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (const T& x : v)
            if (!std::isfinite(double(x))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (int64_t i = 0; i < numel(); ++i) out.v[size_t(i)] = U(v[size_t(i)]);
        return out;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string r = "[";
        for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
        return r + "]";
    }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <class T>
void check_shape(const Tensor<T>& t, const std::vector<int>& want, const char* what) {
    if (t.shape != want)
        throw std::invalid_argument(std::string(what) + ": shape " + Tensor<T>::shape_str(t.shape) +
                                    ", expected " + Tensor<T>::shape_str(want));
}

}  // namespace genpt
