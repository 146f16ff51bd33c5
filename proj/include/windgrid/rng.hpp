#pragma once

#include <cmath>
#include <cstdint>

#include "windgrid/common.hpp"

namespace windgrid {

/// Counter-based pseudo-random stream.
///
/// Each draw is a stateless mix of (seed, stream id, counter), so a stream can
/// never be exhausted, independent streams never collide, and replaying a
/// (seed, stream) pair reproduces the exact draw sequence bit for bit. One
/// stream is assigned per stochastic source; the seed is the per-path seed.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream)
        : key_(mix(mix(seed + kGolden) ^ mix(stream ^ kStreamSalt))) {}

    /// Next raw 64-bit word.
    [[nodiscard]] std::uint64_t raw() { return mix(key_ + (counter_++) * kGolden); }

    /// Uniform draw in the open interval (0, 1).
    [[nodiscard]] Real uniform() {
        return (static_cast<Real>(raw() >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal draw (Box-Muller, second value cached).
    [[nodiscard]] Real normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const Real u1 = uniform();
        const Real u2 = uniform();
        const Real r = std::sqrt(-2.0 * std::log(u1));
        const Real a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
    static constexpr std::uint64_t kStreamSalt = 0xD2B74407B1CE6E93ull;

    // SplitMix64 finalizer; full-period bijection on 64-bit words.
    static std::uint64_t mix(std::uint64_t z) {
        z += kGolden;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    Real spare_ = 0.0;
};

} // namespace windgrid
