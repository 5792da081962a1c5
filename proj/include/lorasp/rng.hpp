// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string_view>

namespace lorasp {

/// Counter-based generator: output i of a stream keyed by `seed` is
/// splitmix64_finalize(seed + (i + 1) * golden_gamma). No hidden state beyond
/// the (seed, counter) pair, so a stream replays bit-for-bit on any platform.
class Rng {
public:
    static constexpr std::string_view kAlgorithm = "splitmix64-ctr/v1";

    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();

    /// Uniform integer in [0, n); n must be nonzero. Rejection sampling, no modulo bias.
    std::uint64_t below(std::uint64_t n);

    /// Standard normal via Box-Muller (one variate per call, two draws consumed).
    double normal();

    /// Child stream derived from this stream's seed and `stream_id`; does not
    /// advance this stream.
    Rng split(std::uint64_t stream_id) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_finalize(std::uint64_t z);

}  // namespace lorasp
