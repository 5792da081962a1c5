// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "lorasp/matrix.hpp"
#include "lorasp/rng.hpp"

namespace lorasp {

enum class MaskScheme : std::uint8_t {
    GlobalRandom = 0,
    RowBalanced = 1,
    AllOnes = 2,
    AllZeros = 3,
};

std::string_view to_string(MaskScheme s);
MaskScheme mask_scheme_from_string(std::string_view s);

/// Binary selection matrix: 1 marks a trainable adapter entry, 0 a frozen one.
///
/// GlobalRandom and RowBalanced masks select exactly floor(rows*cols / 2)
/// entries (RowBalanced: floor(cols/2) per row). The complement of such a mask
/// carries `complemented() == true` and holds the remaining entries.
/// Immutable once built.
class SelectionMask {
public:
    static SelectionMask make(std::size_t rows, std::size_t cols, MaskScheme scheme, Rng& rng);

    /// Rebuilds a mask from raw bits; validates every invariant.
    static SelectionMask from_bits(std::size_t rows, std::size_t cols, MaskScheme scheme,
                                   std::uint64_t seed, bool complemented,
                                   std::vector<std::uint8_t> bits);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return bits_.size(); }
    std::size_t ones_count() const { return ones_; }
    MaskScheme scheme() const { return scheme_; }
    std::uint64_t seed() const { return seed_; }
    bool complemented() const { return complemented_; }

    bool selected(std::size_t i, std::size_t j) const { return bits_[i * cols_ + j] != 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }

    Matrix to_matrix() const;

    friend bool operator==(const SelectionMask&, const SelectionMask&) = default;

private:
    SelectionMask() = default;
    void validate() const;

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::uint8_t> bits_;
    std::size_t ones_ = 0;
    MaskScheme scheme_ = MaskScheme::AllZeros;
    std::uint64_t seed_ = 0;
    bool complemented_ = false;
};

inline SelectionMask make_mask(std::size_t rows, std::size_t cols, MaskScheme scheme, Rng& rng) {
    return SelectionMask::make(rows, cols, scheme, rng);
}

SelectionMask complement(const SelectionMask& m);

/// x with unselected entries replaced by exactly +0.0; selected entries are
/// copied bit-for-bit.
Matrix apply(const SelectionMask& m, const Matrix& x);

/// "LSPS", u16 version, u32 rows, u32 cols, u8 scheme (bit 7 = complemented),
/// u64 seed, then the bits packed LSB-first into bytes, row-major.
void write_mask(std::ostream& out, const SelectionMask& m);
SelectionMask read_mask(std::istream& in);

}  // namespace lorasp
