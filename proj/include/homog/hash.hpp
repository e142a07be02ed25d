#pragma once

#include <array>
#include <cstdint>

namespace homog {

// Counter-based hashing. Every random decision in the library is a pure
// function of (seed, counter words) through mix64, so results are identical
// for any evaluation order and any number of workers.
//
// mix64 is the splitmix64 output function:
//   z  = x + 0x9E3779B97F4A7C15
//   z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
//   z ^= z >> 27;  z *= 0x94D049BB133111EB
//   z ^= z >> 31
// Keys are folded left to right: h = mix64(seed); h = mix64(h ^ word_k).
// Signed words enter as their two's-complement 64-bit pattern.

inline constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

template <int D>
inline std::uint64_t cell_key(std::uint64_t seed, const std::array<std::int64_t, D>& z) {
    std::uint64_t h = mix64(seed);
    for (int i = 0; i < D; ++i) h = mix64(h ^ static_cast<std::uint64_t>(z[i]));
    return h;
}

/// Uniform double in [0,1) from the top 53 bits of a key.
inline double uniform01(std::uint64_t key) {
    return double(key >> 11) * 0x1.0p-53;
}

/// Independent per-member seed for ensemble member `index`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return mix64(base ^ mix64(index + 1));
}

// Salts separating independent decision streams drawn from one cell key.
inline constexpr std::uint64_t kPhaseSalt = 0x706861736500ull;  // "phase"
inline constexpr std::uint64_t kMarkSalt = 0x6d61726b00ull;     // "mark"

}  // namespace homog
