#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cakit/rng.hpp"

namespace cakit {

struct shape_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major matrix of doubles. All kernels below are pure functions
// with a fixed summation order; no internal parallelism.
struct Matrix {
    size_t rows = 0;
    size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(size_t r, size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(size_t i, size_t j) { return data[i * cols + j]; }
    double operator()(size_t i, size_t j) const { return data[i * cols + j]; }

    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

    bool is_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::string shape_str() const {
        return std::to_string(rows) + "x" + std::to_string(cols);
    }

    bool operator==(const Matrix& o) const {
        return rows == o.rows && cols == o.cols && data == o.data;
    }
};

inline Matrix identity(size_t n) {
    Matrix m(n, n);
    for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

inline Matrix gaussian_matrix(size_t rows, size_t cols, RngStream& stream, double scale) {
    Matrix m(rows, cols);
    for (double& v : m.data) v = scale * stream.gaussian();
    return m;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw shape_error("matmul: dimension mismatch " + a.shape_str() + " * " + b.shape_str());
    Matrix out(a.rows, b.cols);
    // fixed i,k,j loop nesting: summation order is part of the contract
    for (size_t i = 0; i < a.rows; ++i) {
        for (size_t k = 0; k < a.cols; ++k) {
            double aik = a(i, k);
            for (size_t j = 0; j < b.cols; ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

inline Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (size_t i = 0; i < m.rows; ++i)
        for (size_t j = 0; j < m.cols; ++j) out(j, i) = m(i, j);
    return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b))
        throw shape_error("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

inline Matrix scale(const Matrix& m, double s) {
    Matrix out = m;
    for (double& v : out.data) v *= s;
    return out;
}

// Numerically stable softmax over each row of exp(scale * m), shifted by
// the row maximum before exponentiation.
inline Matrix row_softmax(const Matrix& m, double scale) {
    Matrix out(m.rows, m.cols);
    for (size_t i = 0; i < m.rows; ++i) {
        double mx = -HUGE_VAL;
        for (size_t j = 0; j < m.cols; ++j) mx = std::max(mx, m(i, j));
        double sum = 0.0;
        for (size_t j = 0; j < m.cols; ++j) {
            double e = std::exp(scale * (m(i, j) - mx));
            out(i, j) = e;
            sum += e;
        }
        for (size_t j = 0; j < m.cols; ++j) out(i, j) /= sum;
    }
    return out;
}

inline constexpr double kLayerNormEps = 1e-6;

// Per-row standardization: subtract the row mean, divide by
// sqrt(population variance + eps).
inline Matrix layer_norm(const Matrix& m, double eps = kLayerNormEps) {
    if (m.cols < 2)
        throw shape_error("layer_norm: need at least 2 columns, got " + m.shape_str());
    Matrix out(m.rows, m.cols);
    for (size_t i = 0; i < m.rows; ++i) {
        double mean = 0.0;
        for (size_t j = 0; j < m.cols; ++j) mean += m(i, j);
        mean /= static_cast<double>(m.cols);
        double var = 0.0;
        for (size_t j = 0; j < m.cols; ++j) {
            double d = m(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(m.cols);
        double inv = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < m.cols; ++j) out(i, j) = (m(i, j) - mean) * inv;
    }
    return out;
}

// Elementwise GELU, tanh approximation:
//   0.5 * x * (1 + tanh(sqrt(2/pi) * (x + 0.044715 * x^3)))
inline double gelu_scalar(double x) {
    const double k = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

inline Matrix gelu(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data) v = gelu_scalar(v);
    return out;
}

// Rows [begin, end) as a new matrix.
inline Matrix row_slice(const Matrix& m, size_t begin, size_t end) {
    if (begin > end || end > m.rows)
        throw shape_error("row_slice: bad range on " + m.shape_str());
    Matrix out(end - begin, m.cols);
    std::copy(m.data.begin() + begin * m.cols, m.data.begin() + end * m.cols, out.data.begin());
    return out;
}

inline Matrix vstack(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols)
        throw shape_error("vstack: column mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

inline Matrix hstack(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows)
        throw shape_error("hstack: row mismatch " + a.shape_str() + " vs " + b.shape_str());
    Matrix out(a.rows, a.cols + b.cols);
    for (size_t i = 0; i < a.rows; ++i) {
        for (size_t j = 0; j < a.cols; ++j) out(i, j) = a(i, j);
        for (size_t j = 0; j < b.cols; ++j) out(i, a.cols + j) = b(i, j);
    }
    return out;
}

// Columns [begin, end) as a new matrix (head extraction).
inline Matrix col_slice(const Matrix& m, size_t begin, size_t end) {
    if (begin > end || end > m.cols)
        throw shape_error("col_slice: bad range on " + m.shape_str());
    Matrix out(m.rows, end - begin);
    for (size_t i = 0; i < m.rows; ++i)
        for (size_t j = begin; j < end; ++j) out(i, j - begin) = m(i, j);
    return out;
}

}  // namespace cakit
