// SPDX-License-Identifier: Apache-2.0

#include "lorasp/selection.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "lorasp/detail/binary_io.hpp"
#include "lorasp/error.hpp"

namespace lorasp {

namespace {

constexpr std::string_view kMagic = "LSPS";
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kComplementFlag = 0x80;

bool is_half_scheme(MaskScheme s) {
    return s == MaskScheme::GlobalRandom || s == MaskScheme::RowBalanced;
}

// Marks a uniformly random k-subset of `slots` (partial Fisher-Yates).
void select_subset(std::vector<std::size_t>& slots, std::size_t k, Rng& rng,
                   std::span<std::uint8_t> bits) {
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(slots.size() - i));
        std::swap(slots[i], slots[j]);
        bits[slots[i]] = 1;
    }
}

}  // namespace

std::string_view to_string(MaskScheme s) {
    switch (s) {
        case MaskScheme::GlobalRandom: return "global_random";
        case MaskScheme::RowBalanced: return "row_balanced";
        case MaskScheme::AllOnes: return "all_ones";
        case MaskScheme::AllZeros: return "all_zeros";
    }
    return "unknown";
}

MaskScheme mask_scheme_from_string(std::string_view s) {
    for (auto scheme : {MaskScheme::GlobalRandom, MaskScheme::RowBalanced, MaskScheme::AllOnes,
                        MaskScheme::AllZeros}) {
        if (to_string(scheme) == s) {
            return scheme;
        }
    }
    throw ParameterError(fmt::format("unknown mask scheme '{}'", s));
}

SelectionMask SelectionMask::make(std::size_t rows, std::size_t cols, MaskScheme scheme, Rng& rng) {
    if (rows == 0 || cols == 0) {
        throw ParameterError(fmt::format("make_mask: zero-size mask {}x{}", rows, cols));
    }
    if (scheme == MaskScheme::RowBalanced && cols % 2 != 0) {
        throw ParameterError(fmt::format("make_mask: row_balanced needs even cols, got {}", cols));
    }
    SelectionMask m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.scheme_ = scheme;
    m.seed_ = rng.seed();
    m.bits_.assign(rows * cols, 0);

    switch (scheme) {
        case MaskScheme::AllOnes:
            std::ranges::fill(m.bits_, std::uint8_t{1});
            break;
        case MaskScheme::AllZeros:
            break;
        case MaskScheme::GlobalRandom: {
            std::vector<std::size_t> slots(rows * cols);
            std::iota(slots.begin(), slots.end(), std::size_t{0});
            select_subset(slots, slots.size() / 2, rng, m.bits_);
            break;
        }
        case MaskScheme::RowBalanced: {
            std::vector<std::size_t> slots(cols);
            for (std::size_t i = 0; i < rows; ++i) {
                std::iota(slots.begin(), slots.end(), i * cols);
                select_subset(slots, cols / 2, rng, m.bits_);
            }
            break;
        }
    }
    m.ones_ = static_cast<std::size_t>(std::ranges::count(m.bits_, std::uint8_t{1}));
    m.validate();
    return m;
}

SelectionMask SelectionMask::from_bits(std::size_t rows, std::size_t cols, MaskScheme scheme,
                                       std::uint64_t seed, bool complemented,
                                       std::vector<std::uint8_t> bits) {
    SelectionMask m;
    m.rows_ = rows;
    m.cols_ = cols;
    m.scheme_ = scheme;
    m.seed_ = seed;
    m.complemented_ = complemented;
    m.bits_ = std::move(bits);
    m.ones_ = static_cast<std::size_t>(std::ranges::count(m.bits_, std::uint8_t{1}));
    m.validate();
    return m;
}

void SelectionMask::validate() const {
    if (bits_.size() != rows_ * cols_) {
        throw ShapeError("SelectionMask: bit count does not match shape");
    }
    if (!std::ranges::all_of(bits_, [](std::uint8_t b) { return b <= 1; })) {
        throw ParameterError("SelectionMask: entries must be 0 or 1");
    }
    const std::size_t n = bits_.size();
    std::size_t expected = 0;
    switch (scheme_) {
        case MaskScheme::AllOnes: expected = complemented_ ? 0 : n; break;
        case MaskScheme::AllZeros: expected = complemented_ ? n : 0; break;
        default: expected = complemented_ ? n - n / 2 : n / 2; break;
    }
    if (ones_ != expected) {
        throw ParameterError(fmt::format("SelectionMask: {} ones, scheme {} requires {}", ones_,
                                         to_string(scheme_), expected));
    }
    if (scheme_ == MaskScheme::RowBalanced) {
        if (cols_ % 2 != 0) {
            throw ParameterError("SelectionMask: row_balanced needs even cols");
        }
        for (std::size_t i = 0; i < rows_; ++i) {
            const auto row = std::span(bits_).subspan(i * cols_, cols_);
            if (static_cast<std::size_t>(std::ranges::count(row, std::uint8_t{1})) != cols_ / 2) {
                throw ParameterError(fmt::format("SelectionMask: row {} is not balanced", i));
            }
        }
    }
}

Matrix SelectionMask::to_matrix() const {
    Matrix m(rows_, cols_);
    auto out = m.mutable_values();
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        out[i] = bits_[i] ? 1.0 : 0.0;
    }
    return m;
}

SelectionMask complement(const SelectionMask& m) {
    std::vector<std::uint8_t> bits(m.bits().begin(), m.bits().end());
    for (auto& b : bits) {
        b = static_cast<std::uint8_t>(1 - b);
    }
    // The fixed-count schemes swap into each other; the half schemes track the flip.
    MaskScheme scheme = m.scheme();
    bool flipped = !m.complemented();
    if (!is_half_scheme(scheme)) {
        scheme = scheme == MaskScheme::AllOnes ? MaskScheme::AllZeros : MaskScheme::AllOnes;
        flipped = false;
    }
    // Row-balanced complements stay balanced (cols is even), so the per-row check still holds.
    return SelectionMask::from_bits(m.rows(), m.cols(), scheme, m.seed(), flipped, std::move(bits));
}

Matrix apply(const SelectionMask& m, const Matrix& x) {
    if (m.rows() != x.rows() || m.cols() != x.cols()) {
        throw ShapeError(fmt::format("apply: mask ({}x{}) vs matrix {}", m.rows(), m.cols(),
                                     x.shape_str()));
    }
    Matrix out(x.rows(), x.cols());
    auto dst = out.mutable_values();
    auto src = x.values();
    auto bits = m.bits();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (bits[i]) {
            dst[i] = src[i];
        }
    }
    return out;
}

void write_mask(std::ostream& out, const SelectionMask& m) {
    detail::put_magic(out, kMagic);
    detail::put_le<std::uint16_t>(out, kVersion);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
    std::uint8_t scheme = static_cast<std::uint8_t>(m.scheme());
    if (m.complemented()) {
        scheme |= kComplementFlag;
    }
    detail::put_le<std::uint8_t>(out, scheme);
    detail::put_le<std::uint64_t>(out, m.seed());
    std::vector<char> packed((m.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (m.bits()[i]) {
            packed[i / 8] = static_cast<char>(packed[i / 8] | (1 << (i % 8)));
        }
    }
    out.write(packed.data(), static_cast<std::streamsize>(packed.size()));
    if (!out) {
        throw IoError("write_mask: stream failure");
    }
}

SelectionMask read_mask(std::istream& in) {
    detail::expect_magic(in, kMagic);
    const auto version = detail::get_le<std::uint16_t>(in);
    if (version != kVersion) {
        throw IoError(fmt::format("read_mask: unsupported version {}", version));
    }
    const std::size_t rows = detail::get_le<std::uint32_t>(in);
    const std::size_t cols = detail::get_le<std::uint32_t>(in);
    const auto scheme_byte = detail::get_le<std::uint8_t>(in);
    const auto seed = detail::get_le<std::uint64_t>(in);
    const std::uint8_t scheme_id = scheme_byte & ~kComplementFlag;
    if (scheme_id > static_cast<std::uint8_t>(MaskScheme::AllZeros)) {
        throw IoError(fmt::format("read_mask: unknown scheme id {}", scheme_id));
    }
    std::vector<char> packed((rows * cols + 7) / 8);
    if (!in.read(packed.data(), static_cast<std::streamsize>(packed.size()))) {
        throw IoError("read_mask: truncated bitset");
    }
    std::vector<std::uint8_t> bits(rows * cols);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        bits[i] = static_cast<std::uint8_t>((static_cast<unsigned char>(packed[i / 8]) >> (i % 8)) & 1);
    }
    return SelectionMask::from_bits(rows, cols, static_cast<MaskScheme>(scheme_id), seed,
                                    (scheme_byte & kComplementFlag) != 0, std::move(bits));
}

}  // namespace lorasp
