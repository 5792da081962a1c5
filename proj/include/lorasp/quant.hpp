// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "lorasp/matrix.hpp"

namespace lorasp {

/// 4-bit NormalFloat levels: standard-normal quantiles normalized to [-1, 1]
/// with -1, 0 and +1 as exact members. Regenerate with tools/nf4_codebook.py.
inline constexpr std::array<double, 16> kNf4Codebook = {
    -1.0,
    -0.69619289060372,
    -0.5250730386952291,
    -0.3949174906993099,
    -0.2844413576181077,
    -0.18477343519288886,
    -0.09104999214427931,
    0.0,
    0.07958032909416937,
    0.16093017270493618,
    0.2461122939299359,
    0.33791519352165506,
    0.44070980241319013,
    0.562616970075237,
    0.7229567278928821,
    1.0,
};

inline constexpr std::size_t kDefaultBlockSize = 64;

/// Index of the codebook level nearest to x; ties go to the lower index.
std::uint8_t nearest_level(double x);

/// Half of the widest gap between adjacent codebook levels.
double codebook_half_max_gap();

/// Block-wise absmax 4-bit quantization of a matrix. Blocks are consecutive
/// runs of `block_size` entries in row-major order; the last may be short.
class QuantizedTensor {
public:
    QuantizedTensor(std::size_t rows, std::size_t cols, std::size_t block_size,
                    std::vector<std::uint8_t> codes, std::vector<double> scales);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t block_size() const { return block_size_; }
    std::size_t num_blocks() const { return scales_.size(); }
    std::span<const std::uint8_t> codes() const { return codes_; }
    std::span<const double> scales() const { return scales_; }
    std::span<const double, 16> codebook() const { return kNf4Codebook; }

    friend bool operator==(const QuantizedTensor&, const QuantizedTensor&) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::size_t block_size_;
    std::vector<std::uint8_t> codes_;  // one code per entry in memory
    std::vector<double> scales_;
};

QuantizedTensor quantize(const Matrix& w, std::size_t block_size = kDefaultBlockSize);
Matrix dequantize(const QuantizedTensor& q);

struct ErrorStats {
    double max_abs = 0.0;
    double rmse = 0.0;
};

ErrorStats quant_error(const Matrix& w, std::size_t block_size = kDefaultBlockSize);

/// "LSPQ", u16 version, u32 rows, u32 cols, u32 block_size, 16 x f64 codebook,
/// f64 scale per block, then codes packed two per byte, low nibble first.
void write_quantized(std::ostream& out, const QuantizedTensor& q);
QuantizedTensor read_quantized(std::istream& in);

/// Exact byte length of the serialized form.
std::size_t serialized_size(std::size_t entries, std::size_t block_size);

}  // namespace lorasp
