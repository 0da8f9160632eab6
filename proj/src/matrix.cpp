// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#include "lorax/matrix.hpp"

#include <cmath>
#include <string>

#include "lorax/errors.hpp"

namespace lorax {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw ShapeError("matrix value count " + std::to_string(values_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::vector<double> Matrix::column(std::size_t j) const {
    std::vector<double> col(rows_);
    for (std::size_t i = 0; i < rows_; ++i) col[i] = (*this)(i, j);
    return col;
}

void Matrix::set_column(std::size_t j, const std::vector<double>& col) {
    for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = col[i];
}

Matrix Matrix::left_columns(std::size_t count) const {
    if (count > cols_) count = cols_;
    Matrix out(rows_, count);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = (*this)(i, j);
    return out;
}

bool Matrix::all_finite() const {
    for (double v : values_)
        if (!std::isfinite(v)) return false;
    return true;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t n = a.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
        }
    }
    return c;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
    if (!same_shape(a, b)) throw ShapeError("matrix add shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.values().size(); ++i) c.values()[i] += b.values()[i];
    return c;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
    if (!same_shape(a, b)) throw ShapeError("matrix subtract shape mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < c.values().size(); ++i) c.values()[i] -= b.values()[i];
    return c;
}

Matrix operator*(double s, const Matrix& a) {
    Matrix c = a;
    for (double& v : c.values()) v *= s;
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix scale_columns(const Matrix& a, const std::vector<double>& d) {
    if (d.size() != a.cols()) throw ShapeError("scale_columns size mismatch");
    Matrix c = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) c(i, j) *= d[j];
    return c;
}

double frobenius_norm(const Matrix& a) {
    double sum = 0.0;
    for (double v : a.values()) sum += v * v;
    return std::sqrt(sum);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.values()) m = std::max(m, std::abs(v));
    return m;
}

bool same_shape(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols();
}

}  // namespace lorax
