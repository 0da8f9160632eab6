// Copyright (c) 2026 the lorax authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

namespace lorax {

/// Dense row-major matrix of doubles. All toolkit arithmetic runs in
/// float64; tensors are widened on load and narrowed only on serialization.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return values_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    std::vector<double> column(std::size_t j) const;
    void set_column(std::size_t j, const std::vector<double>& col);
    /// First `count` columns as a new matrix.
    Matrix left_columns(std::size_t count) const;

    bool all_finite() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

Matrix transpose(const Matrix& a);
/// a * diag(d); d.size() must equal a.cols().
Matrix scale_columns(const Matrix& a, const std::vector<double>& d);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
bool same_shape(const Matrix& a, const Matrix& b);

}  // namespace lorax
