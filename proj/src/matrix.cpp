// SPDX-License-Identifier: Apache-2.0

#include "lorasp/matrix.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fmt/format.h>
#include <istream>
#include <limits>
#include <ostream>

#include "lorasp/detail/binary_io.hpp"
#include "lorasp/error.hpp"

namespace lorasp {

namespace {

constexpr std::string_view kMagic = "LSPM";
constexpr std::uint16_t kVersion = 1;

void require_finite(std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError("Matrix: non-finite value in constructor input");
        }
    }
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op, a.shape_str(), b.shape_str()));
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) {
        throw NumericError("Matrix: non-finite fill value");
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows * cols) {
        throw ShapeError(fmt::format("Matrix: {} values do not fill {}x{}", data_.size(), rows, cols));
    }
    require_finite(data_);
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw ShapeError("Matrix::from_rows: ragged rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

std::string Matrix::shape_str() const { return fmt::format("({}x{})", rows_, cols_); }

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError(fmt::format("matmul: shape mismatch {} x {}", a.shape_str(), b.shape_str()));
    }
    Matrix c(a.rows(), b.cols());
    // i-k-j order: each c(i, j) accumulates a(i, k) * b(k, j) for ascending k
    // starting from 0.0, so the summation order is the textbook dot product.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "hadamard");
    Matrix c(a.rows(), a.cols());
    auto out = c.mutable_values();
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            t(j, i) = m(i, j);
        }
    }
    return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix c = a;
    auto out = c.mutable_values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return c;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix c = a;
    auto out = c.mutable_values();
    auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bv[i];
    }
    return c;
}

Matrix scaled(const Matrix& m, double s) {
    Matrix c = m;
    for (double& v : c.mutable_values()) {
        v *= s;
    }
    return c;
}

Matrix gauss(Rng& rng, std::size_t rows, std::size_t cols, double mean, double std) {
    if (!(std >= 0.0) || !std::isfinite(std) || !std::isfinite(mean)) {
        throw ParameterError(fmt::format("gauss: invalid std {} / mean {}", std, mean));
    }
    Matrix m(rows, cols);
    for (double& v : m.mutable_values()) {
        v = mean + std * rng.normal();
    }
    return m;
}

bool all_finite(const Matrix& m) {
    return std::ranges::all_of(m.values(), [](double v) { return std::isfinite(v); });
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        return false;
    }
    return a.size() == 0 ||
           std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    }
    return worst;
}

double frobenius_sq(const Matrix& m) {
    double s = 0.0;
    for (double v : m.values()) {
        s += v * v;
    }
    return s;
}

void write_matrix(std::ostream& out, const Matrix& m) {
    if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
        m.cols() > std::numeric_limits<std::uint32_t>::max()) {
        throw ShapeError("write_matrix: dimension exceeds u32");
    }
    detail::put_magic(out, kMagic);
    detail::put_le<std::uint16_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) {
        detail::put_f64(out, v);
    }
    if (!out) {
        throw IoError("write_matrix: stream failure");
    }
}

Matrix read_matrix(std::istream& in) {
    detail::expect_magic(in, kMagic);
    const auto version = detail::get_le<std::uint16_t>(in);
    if (version != kVersion) {
        throw IoError(fmt::format("read_matrix: unsupported version {}", version));
    }
    const std::size_t rows = detail::get_le<std::uint32_t>(in);
    const std::size_t cols = detail::get_le<std::uint32_t>(in);
    std::vector<double> data(rows * cols);
    for (double& v : data) {
        v = detail::get_f64(in);
    }
    return Matrix(rows, cols, std::move(data));
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out << (j ? "," : "") << fmt::format("{:.17g}", m(i, j));
        }
        out << '\n';
    }
}

}  // namespace lorasp
