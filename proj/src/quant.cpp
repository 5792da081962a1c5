// SPDX-License-Identifier: Apache-2.0

#include "lorasp/quant.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "lorasp/detail/binary_io.hpp"
#include "lorasp/error.hpp"

namespace lorasp {

namespace {

constexpr std::string_view kMagic = "LSPQ";
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kZeroCode = 7;
constexpr std::size_t kHeaderBytes = 4 + 2 + 4 + 4 + 4 + 16 * 8;

std::size_t block_count(std::size_t entries, std::size_t block_size) {
    return (entries + block_size - 1) / block_size;
}

}  // namespace

std::uint8_t nearest_level(double x) {
    // First level >= x, then compare with its lower neighbour; strict < keeps ties low.
    const auto it = std::ranges::lower_bound(kNf4Codebook, x);
    if (it == kNf4Codebook.begin()) {
        return 0;
    }
    if (it == kNf4Codebook.end()) {
        return 15;
    }
    const auto hi = static_cast<std::uint8_t>(it - kNf4Codebook.begin());
    const auto lo = static_cast<std::uint8_t>(hi - 1);
    return (kNf4Codebook[hi] - x) < (x - kNf4Codebook[lo]) ? hi : lo;
}

double codebook_half_max_gap() {
    double widest = 0.0;
    for (std::size_t i = 1; i < kNf4Codebook.size(); ++i) {
        widest = std::max(widest, kNf4Codebook[i] - kNf4Codebook[i - 1]);
    }
    return widest / 2.0;
}

QuantizedTensor::QuantizedTensor(std::size_t rows, std::size_t cols, std::size_t block_size,
                                 std::vector<std::uint8_t> codes, std::vector<double> scales)
    : rows_(rows), cols_(cols), block_size_(block_size), codes_(std::move(codes)),
      scales_(std::move(scales)) {
    if (block_size_ == 0) {
        throw ParameterError("QuantizedTensor: block_size must be >= 1");
    }
    if (codes_.size() != rows_ * cols_) {
        throw ShapeError("QuantizedTensor: code count does not match shape");
    }
    if (scales_.size() != block_count(codes_.size(), block_size_)) {
        throw ShapeError("QuantizedTensor: scale count does not match block count");
    }
    if (!std::ranges::all_of(codes_, [](std::uint8_t c) { return c <= 15; })) {
        throw ParameterError("QuantizedTensor: code out of range");
    }
    if (!std::ranges::all_of(scales_, [](double s) { return std::isfinite(s) && s >= 0.0; })) {
        throw ParameterError("QuantizedTensor: scales must be finite and >= 0");
    }
}

QuantizedTensor quantize(const Matrix& w, std::size_t block_size) {
    if (block_size == 0) {
        throw ParameterError("quantize: block_size must be >= 1");
    }
    const auto values = w.values();
    std::vector<std::uint8_t> codes(values.size(), kZeroCode);
    std::vector<double> scales(block_count(values.size(), block_size), 0.0);
    for (std::size_t b = 0; b < scales.size(); ++b) {
        const std::size_t begin = b * block_size;
        const std::size_t end = std::min(begin + block_size, values.size());
        double absmax = 0.0;
        for (std::size_t i = begin; i < end; ++i) {
            absmax = std::max(absmax, std::abs(values[i]));
        }
        scales[b] = absmax;
        if (absmax == 0.0) {
            continue;
        }
        for (std::size_t i = begin; i < end; ++i) {
            codes[i] = nearest_level(values[i] / absmax);
        }
    }
    return QuantizedTensor(w.rows(), w.cols(), block_size, std::move(codes), std::move(scales));
}

Matrix dequantize(const QuantizedTensor& q) {
    Matrix out(q.rows(), q.cols());
    auto dst = out.mutable_values();
    const auto codes = q.codes();
    const auto scales = q.scales();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        dst[i] = kNf4Codebook[codes[i]] * scales[i / q.block_size()];
    }
    return out;
}

ErrorStats quant_error(const Matrix& w, std::size_t block_size) {
    const Matrix back = dequantize(quantize(w, block_size));
    ErrorStats stats;
    if (w.size() == 0) {
        return stats;
    }
    double sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double e = std::abs(w.values()[i] - back.values()[i]);
        stats.max_abs = std::max(stats.max_abs, e);
        sq += e * e;
    }
    stats.rmse = std::sqrt(sq / static_cast<double>(w.size()));
    return stats;
}

std::size_t serialized_size(std::size_t entries, std::size_t block_size) {
    return kHeaderBytes + 8 * block_count(entries, block_size) + (entries + 1) / 2;
}

void write_quantized(std::ostream& out, const QuantizedTensor& q) {
    detail::put_magic(out, kMagic);
    detail::put_le<std::uint16_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(q.rows()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(q.cols()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(q.block_size()));
    for (double level : kNf4Codebook) {
        detail::put_f64(out, level);
    }
    for (double s : q.scales()) {
        detail::put_f64(out, s);
    }
    const auto codes = q.codes();
    for (std::size_t i = 0; i < codes.size(); i += 2) {
        const std::uint8_t lo = codes[i];
        const std::uint8_t hi = i + 1 < codes.size() ? codes[i + 1] : 0;
        detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(lo | (hi << 4)));
    }
    if (!out) {
        throw IoError("write_quantized: stream failure");
    }
}

QuantizedTensor read_quantized(std::istream& in) {
    detail::expect_magic(in, kMagic);
    const auto version = detail::get_le<std::uint16_t>(in);
    if (version != kVersion) {
        throw IoError(fmt::format("read_quantized: unsupported version {}", version));
    }
    const std::size_t rows = detail::get_le<std::uint32_t>(in);
    const std::size_t cols = detail::get_le<std::uint32_t>(in);
    const std::size_t block_size = detail::get_le<std::uint32_t>(in);
    if (block_size == 0) {
        throw IoError("read_quantized: zero block size");
    }
    for (double level : kNf4Codebook) {
        if (detail::get_f64(in) != level) {
            throw IoError("read_quantized: codebook does not match the built-in NF4 table");
        }
    }
    std::vector<double> scales(block_count(rows * cols, block_size));
    for (double& s : scales) {
        s = detail::get_f64(in);
    }
    std::vector<std::uint8_t> codes(rows * cols);
    for (std::size_t i = 0; i < codes.size(); i += 2) {
        const auto byte = detail::get_le<std::uint8_t>(in);
        codes[i] = byte & 0x0F;
        if (i + 1 < codes.size()) {
            codes[i + 1] = byte >> 4;
        }
    }
    return QuantizedTensor(rows, cols, block_size, std::move(codes), std::move(scales));
}

}  // namespace lorasp
