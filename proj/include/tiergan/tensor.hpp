#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "tiergan/error.hpp"

namespace tiergan {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

// Dense n-dimensional array, row-major. float for training, double for
// gradient checking.
template <typename T = float>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}

    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }

    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        for (T& x : t.data) x = v;
        return t;
    }

    static Tensor scalar(T v) { return Tensor({1}, {v}); }

    std::size_t size() const { return data.size(); }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 2-d accessor (batch, feature).
    T& at2(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& at2(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    // 4-d accessor (batch, channel, row, col).
    std::size_t idx4(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return ((b * shape[1] + c) * shape[2] + y) * shape[3] + x;
    }
    T& at4(std::size_t b, std::size_t c, std::size_t y, std::size_t x) { return data[idx4(b, c, y, x)]; }
    const T& at4(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
        return data[idx4(b, c, y, x)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b)
        throw ShapeError(std::string(what) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                         " do not match");
}

// Spatial geometry shared by conv2d and conv2d_transpose.
struct ConvGeometry {
    std::size_t kh = 1, kw = 1;
    std::size_t sh = 1, sw = 1;
    std::size_t ph = 0, pw = 0;
    std::size_t in_channels = 1, out_channels = 1;

    static std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
        std::size_t padded = in + 2 * p;
        if (padded < k)
            throw GeometryError("conv output size < 1: input " + std::to_string(in) + ", kernel " +
                                std::to_string(k) + ", stride " + std::to_string(s) + ", pad " +
                                std::to_string(p));
        return (padded - k) / s + 1;
    }

    static std::size_t tconv_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
        std::size_t grown = (in - 1) * s + k;
        if (in < 1 || grown <= 2 * p)
            throw GeometryError("transposed conv output size < 1: input " + std::to_string(in) +
                                ", kernel " + std::to_string(k) + ", stride " + std::to_string(s) +
                                ", pad " + std::to_string(p));
        return grown - 2 * p;
    }

    std::pair<std::size_t, std::size_t> conv_out_hw(std::size_t h, std::size_t w) const {
        return {conv_out_dim(h, kh, sh, ph), conv_out_dim(w, kw, sw, pw)};
    }

    std::pair<std::size_t, std::size_t> tconv_out_hw(std::size_t h, std::size_t w) const {
        return {tconv_out_dim(h, kh, sh, ph), tconv_out_dim(w, kw, sw, pw)};
    }
};

} // namespace tiergan
