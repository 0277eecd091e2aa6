#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "escim/errors.hpp"

namespace escim {

// Dense row-major matrix of doubles; the only tensor type in the project.
struct Matrix2D {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix2D() = default;
    Matrix2D(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

// C = A * B
inline void matmul(const Matrix2D& a, const Matrix2D& b, Matrix2D& out) {
    if (a.cols != b.rows) throw ShapeError("matmul: inner dimensions disagree");
    out.rows = a.rows;
    out.cols = b.cols;
    out.data.assign(a.rows * b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
}

// C = A^T * B
inline void matmul_at_b(const Matrix2D& a, const Matrix2D& b, Matrix2D& out) {
    if (a.rows != b.rows) throw ShapeError("matmul_at_b: row counts disagree");
    out.rows = a.cols;
    out.cols = b.cols;
    out.data.assign(a.cols * b.cols, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        const double* brow = b.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            double* orow = out.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
        }
    }
}

// C = A * B^T
inline void matmul_a_bt(const Matrix2D& a, const Matrix2D& b, Matrix2D& out) {
    if (a.cols != b.cols) throw ShapeError("matmul_a_bt: col counts disagree");
    out.rows = a.rows;
    out.cols = b.rows;
    out.data.assign(a.rows * b.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (std::size_t j = 0; j < b.rows; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
            orow[j] = acc;
        }
    }
}

}  // namespace escim
