#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dcr/errors.hpp"

namespace dcr {

/// Dense row-major matrix of doubles. The only tensor shape the library needs;
/// vectors are stored as 1xN or Nx1 as convenient.
struct Tensor2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2D() = default;
    Tensor2D(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::size_t size() const { return data.size(); }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Tensor2D& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

inline std::string shape_str(const Tensor2D& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

inline void require_shape(const Tensor2D& t, std::size_t r, std::size_t c,
                          const char* what) {
    if (t.rows != r || t.cols != c)
        throw DimensionError(std::string(what) + ": expected " + std::to_string(r) +
                             "x" + std::to_string(c) + ", got " + shape_str(t));
}

/// C = A * B
inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
    Tensor2D c(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* crow = c.data.data() + i * c.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

/// C = A^T * B
inline Tensor2D matmul_at(const Tensor2D& a, const Tensor2D& b) {
    if (a.rows != b.rows)
        throw DimensionError("matmul_at: " + shape_str(a) + "^T * " + shape_str(b));
    Tensor2D c(a.cols, b.cols);
    for (std::size_t r = 0; r < a.rows; ++r) {
        const double* arow = a.data.data() + r * a.cols;
        const double* brow = b.data.data() + r * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double v = arow[i];
            if (v == 0.0) continue;
            double* crow = c.data.data() + i * c.cols;
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += v * brow[j];
        }
    }
    return c;
}

/// C = A * B^T
inline Tensor2D matmul_bt(const Tensor2D& a, const Tensor2D& b) {
    if (a.cols != b.cols)
        throw DimensionError("matmul_bt: " + shape_str(a) + " * " + shape_str(b) + "^T");
    Tensor2D c(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.data.data() + j * b.cols;
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            c(i, j) = acc;
        }
    }
    return c;
}

/// Column-wise concatenation [A | B].
inline Tensor2D hconcat(const Tensor2D& a, const Tensor2D& b) {
    if (a.rows != b.rows)
        throw DimensionError("hconcat: " + shape_str(a) + " | " + shape_str(b));
    Tensor2D c(a.rows, a.cols + b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        auto dst = c.row(i);
        auto ra = a.row(i);
        auto rb = b.row(i);
        std::copy(ra.begin(), ra.end(), dst.begin());
        std::copy(rb.begin(), rb.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.cols));
    }
    return c;
}

inline void axpy(double alpha, const Tensor2D& x, Tensor2D& y) {
    if (!x.same_shape(y))
        throw DimensionError("axpy: " + shape_str(x) + " vs " + shape_str(y));
    for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

}  // namespace dcr
