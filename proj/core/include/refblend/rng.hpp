#pragma once

#include <cmath>
#include <cstdint>

namespace refblend {

namespace detail {

// splitmix64 finalizer; pure 64-bit arithmetic, identical on every platform.
inline uint64_t mix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

} // namespace detail

// Counter-based generator: every output is a pure function of (seed, counter),
// so a draw at counter n is the same no matter what was drawn before it and
// streams can be forked without coupling.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed) {}

    // Independent stream derived from this seed and a tag.
    Rng fork(uint64_t tag) const {
        return Rng(detail::mix64(seed_ ^ detail::mix64(tag ^ 0xA5A5A5A5A5A5A5A5ULL)));
    }

    uint64_t next_u64() { return word(counter_++, 0); }

    // Uniform in (0, 1], 53-bit resolution.
    double next_uniform() {
        uint64_t bits = next_u64() >> 11;
        if (bits == 0) bits = 1;
        return static_cast<double>(bits) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes one counter (two lanes).
    double next_gaussian() {
        uint64_t c = counter_++;
        uint64_t b1 = word(c, 1) >> 11;
        uint64_t b2 = word(c, 2) >> 11;
        if (b1 == 0) b1 = 1;
        double u1 = static_cast<double>(b1) * 0x1.0p-53;
        double u2 = static_cast<double>(b2) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Uniform integer in [lo, hi], unbiased via 128-bit multiply.
    int next_int(int lo, int hi) {
        uint64_t range = static_cast<uint64_t>(static_cast<int64_t>(hi) - lo) + 1;
        unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * range;
        return lo + static_cast<int>(static_cast<uint64_t>(wide >> 64));
    }

    uint64_t seed() const { return seed_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t word(uint64_t ctr, uint64_t lane) const {
        return detail::mix64(detail::mix64(seed_ + 0xD1B54A32D192ED03ULL * (ctr + 1)) + lane);
    }

    uint64_t seed_ = 0;
    uint64_t counter_ = 0;
};

} // namespace refblend
