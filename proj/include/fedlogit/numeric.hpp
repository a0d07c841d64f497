#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "fedlogit/errors.hpp"
#include "fedlogit/matrix.hpp"

namespace fedlogit {

// log(sum_i exp(x_i)), stabilized by max subtraction.
inline double log_sum_exp(std::span<const double> values) {
    if (values.empty()) throw InputError("log_sum_exp: empty input");
    double max_v = *std::max_element(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) sum += std::exp(v - max_v);
    return max_v + std::log(sum);
}

// Rowwise softmax with max subtraction. Rows sum to 1 within 1e-9 for finite input.
inline Matrix softmax(const Matrix& logits) {
    require_finite(logits, "softmax input");
    Matrix out(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        auto in_row = logits.row(i);
        double max_v = *std::max_element(in_row.begin(), in_row.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            double e = std::exp(logits(i, j) - max_v);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < logits.cols; ++j) out(i, j) /= sum;
    }
    return out;
}

// Rowwise log-softmax (used by the loss; avoids log(softmax) cancellation).
inline Matrix log_softmax(const Matrix& logits) {
    require_finite(logits, "log_softmax input");
    Matrix out(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double lse = log_sum_exp(logits.row(i));
        for (std::size_t j = 0; j < logits.cols; ++j) out(i, j) = logits(i, j) - lse;
    }
    return out;
}

inline Matrix one_hot(std::span<const int> labels, std::size_t num_classes) {
    Matrix out(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw InputError("one_hot: label outside [0, C)");
        out(i, static_cast<std::size_t>(y)) = 1.0;
    }
    return out;
}

// Index of the row maximum; ties resolve to the lowest index.
inline std::size_t argmax_row(const Matrix& m, std::size_t i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m.cols; ++j)
        if (m(i, j) > m(i, best)) best = j;
    return best;
}

}  // namespace fedlogit
