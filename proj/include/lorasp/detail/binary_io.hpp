// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "lorasp/error.hpp"

// Explicit little-endian encoders shared by the blob formats.
namespace lorasp::detail {

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
    std::array<char, sizeof(UInt)> buf{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    }
    out.write(buf.data(), buf.size());
}

template <typename UInt>
UInt get_le(std::istream& in) {
    std::array<char, sizeof(UInt)> buf{};
    if (!in.read(buf.data(), buf.size())) {
        throw IoError("unexpected end of stream");
    }
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) {
        v |= static_cast<UInt>(static_cast<unsigned char>(buf[i])) << (8 * i);
    }
    return v;
}

inline void put_f64(std::ostream& out, double v) { put_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(std::istream& in) { return std::bit_cast<double>(get_le<std::uint64_t>(in)); }

inline void put_magic(std::ostream& out, std::string_view magic) {
    out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& in, std::string_view magic) {
    std::string got(magic.size(), '\0');
    if (!in.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
        throw IoError("bad magic: expected " + std::string(magic));
    }
}

}  // namespace lorasp::detail
