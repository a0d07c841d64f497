#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedlogit/errors.hpp"

namespace fedlogit {

// Dense row-major matrix of doubles. All computation in the library is f64.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    const double& operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Matrix& other) const { return rows == other.rows && cols == other.cols; }
    bool empty() const { return data.empty(); }
};

inline bool all_finite(const Matrix& m) {
    for (double v : m.data)
        if (!std::isfinite(v)) return false;
    return true;
}

inline void require_finite(const Matrix& m, const char* context) {
    if (!all_finite(m)) throw InputError(std::string("non-finite values in ") + context);
}

// out = a * b
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw ConfigError("matmul: inner dimensions disagree");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* out_row = out.data.data() + i * out.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* b_row = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += aik * b_row[j];
        }
    }
    return out;
}

// out = a^T * b, with a stored untransposed (k x n), b (k x m) -> (n x m)
inline Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) throw ConfigError("matmul_at_b: inner dimensions disagree");
    Matrix out(a.cols, b.cols);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double* a_row = a.data.data() + k * a.cols;
        const double* b_row = b.data.data() + k * b.cols;
        for (std::size_t i = 0; i < a.cols; ++i) {
            const double aki = a_row[i];
            if (aki == 0.0) continue;
            double* out_row = out.data.data() + i * out.cols;
            for (std::size_t j = 0; j < b.cols; ++j) out_row[j] += aki * b_row[j];
        }
    }
    return out;
}

// out = a * b^T, a (n x k), b (m x k) -> (n x m)
inline Matrix matmul_a_bt(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) throw ConfigError("matmul_a_bt: inner dimensions disagree");
    Matrix out(a.rows, b.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* a_row = a.data.data() + i * a.cols;
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* b_row = b.data.data() + j * b.cols;
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) sum += a_row[k] * b_row[k];
            out(i, j) = sum;
        }
    }
    return out;
}

// Column sums as a 1 x cols matrix.
inline Matrix column_sums(const Matrix& m) {
    Matrix out(1, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out(0, j) += m(i, j);
    return out;
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), m.cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out(i, j) = m(indices[i], j);
    return out;
}

}  // namespace fedlogit
