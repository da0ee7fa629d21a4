#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sstatl/errors.hpp"

namespace sstatl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
    Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_size(shape))
            throw Error(Errc::shape_mismatch, "tensor data length " + std::to_string(data.size()) +
                                                  " does not match shape " + shape_string(shape));
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return Tensor({rows, cols}, std::move(values));
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
    std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

    double& operator()(std::size_t r, std::size_t c) { return data[r * shape.back() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * shape.back() + c]; }
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<double> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

    bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const Shape& shape) {
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

inline void require_shape(const Tensor& t, const Shape& expected, const char* what) {
    if (t.shape != expected)
        throw Error(Errc::shape_mismatch, std::string(what) + ": expected " + shape_string(expected) +
                                              ", got " + shape_string(t.shape));
}

}  // namespace sstatl
