// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "lorasp/rng.hpp"

namespace lorasp {

/// Dense row-major matrix of doubles. Entry (i, j) lives at data[i * cols + j].
///
/// Every public constructor rejects NaN/Inf. Element access through the
/// non-const accessors is for single-owner builders (optimizers, gradient
/// accumulators); they do not re-check finiteness.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

    std::span<const double> values() const { return data_; }
    std::span<double> mutable_values() { return data_; }

    /// Element-wise == (so +0.0 == -0.0). Use bit_equal for bit identity.
    friend bool operator==(const Matrix& a, const Matrix& b) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& m, double s);

/// i.i.d. N(mean, std^2) entries, drawn in row-major order.
Matrix gauss(Rng& rng, std::size_t rows, std::size_t cols, double mean, double std);

bool all_finite(const Matrix& m);
bool bit_equal(const Matrix& a, const Matrix& b);
double max_abs_diff(const Matrix& a, const Matrix& b);
double frobenius_sq(const Matrix& m);

/// Flat binary: "LSPM", u16 version, u32 rows, u32 cols, then rows*cols
/// little-endian IEEE-754 doubles in row-major order.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void write_matrix_csv(std::ostream& out, const Matrix& m);

}  // namespace lorasp
