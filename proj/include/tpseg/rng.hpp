#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>

namespace tpseg {

// Portable deterministic RNG. splitmix64 with the usual constants
// (0x9E3779B97F4A7C15 increment, 0xBF58476D1CE4E5B9 / 0x94D049BB133111EB
// mixers). Every stream in the project (weight init, dataset synthesis,
// batch sampling) derives from explicit 64-bit seeds through this
// generator, never from platform RNG, so outputs replay bit-identically.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) on the dyadic grid k * 2^-53; exact in double.
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased-enough bounded draw via 128-bit multiply-shift.
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    // Inclusive integer range.
    std::int64_t range_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Approximate standard normal: Irwin-Hall(12) - 6. Avoids libm
    // transcendentals so the value is identical on every platform.
    double normalish() {
        double s = 0.0;
        for (int i = 0; i < 12; ++i) s += uniform01();
        return s - 6.0;
    }

private:
    std::uint64_t state_;
};

// One-shot stateless mix of up to four words; used for coordinate hashing
// in the dataset generator and for deriving per-stream seeds.
inline std::uint64_t hash_mix(std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
    std::uint64_t z = a;
    z = (z ^ (b + 0x9E3779B97F4A7C15ull + (z << 6) + (z >> 2)));
    z = (z ^ (c + 0x9E3779B97F4A7C15ull + (z << 6) + (z >> 2)));
    z = (z ^ (d + 0x9E3779B97F4A7C15ull + (z << 6) + (z >> 2)));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(const void* data, std::size_t size,
                             std::uint64_t seed = 0xCBF29CE484222325ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
    return fnv1a64(s.data(), s.size());
}

} // namespace tpseg
