#pragma once
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "errors.hpp"

namespace maskrec {

// Dense row-major matrix of doubles. Rows are samples, columns features.
struct Tensor2 {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor2() = default;
    Tensor2(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    bool same_shape(const Tensor2& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline void require_same_shape(const Tensor2& a, const Tensor2& b, const char* what) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(what) + ": shape mismatch (" +
                             std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                             std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
}

// c = a * b. The k-loop is hoisted so the inner loop runs down contiguous
// rows of b and vectorizes.
inline void matmul(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    if (a.cols != b.rows)
        throw DimensionError("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                             " vs " + std::to_string(b.rows) + ")");
    c.rows = a.rows;
    c.cols = b.cols;
    c.data.assign(a.rows * b.cols, 0.0);
    const std::size_t n = b.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c = a^T * b, without materializing the transpose.
inline void matmul_at_b(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    if (a.rows != b.rows)
        throw DimensionError("matmul_at_b: row counts differ");
    c.rows = a.cols;
    c.cols = b.cols;
    c.data.assign(a.cols * b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        const double* brow = b.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* crow = c.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

// c = a * b^T.
inline void matmul_a_bt(const Tensor2& a, const Tensor2& b, Tensor2& c) {
    if (a.cols != b.cols)
        throw DimensionError("matmul_a_bt: column counts differ");
    c.rows = a.rows;
    c.cols = b.rows;
    c.data.assign(a.rows * b.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            crow[j] = acc;
        }
    }
}

} // namespace maskrec
