#pragma once

#include <cmath>
#include <cstdint>

namespace spdelab {

// Counter-based random number generation.
//
// Every random quantity in the library is a pure function of
// (master_seed, path_index, counter).  There is no generator state to
// advance or jump, so any worker may compute any entry of any path's
// noise in any order and obtain bit-identical values.
//
// The construction is the SplitMix64 stream evaluated by random access:
// the n-th output of SplitMix64 seeded with s is mix64(s + n*GAMMA).

namespace rng {

inline constexpr std::uint64_t GAMMA = 0x9E3779B97F4A7C15ull;

// SplitMix64 finalizer (bijective on 64-bit words).
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Per-path stream key.  mix64 is a bijection, so distinct path indices
// produce distinct masks and distinct keys for a fixed master seed.
inline std::uint64_t stream_key(std::uint64_t master_seed,
                                std::uint64_t path_index) {
  return mix64(master_seed + GAMMA) ^ mix64(path_index ^ 0xA5A5A5A5A5A5A5A5ull);
}

// n-th 64-bit word of the stream identified by key.
inline std::uint64_t word_at(std::uint64_t key, std::uint64_t counter) {
  return mix64(key + GAMMA * counter);
}

// Uniform in [0,1) with 53 random bits.
inline double uniform_at(std::uint64_t key, std::uint64_t counter) {
  return static_cast<double>(word_at(key, counter) >> 11) * 0x1.0p-53;
}

// Uniform in (0,1]; safe as a log argument.
inline double uniform_pos_at(std::uint64_t key, std::uint64_t counter) {
  return static_cast<double>((word_at(key, counter) >> 11) + 1) * 0x1.0p-53;
}

// Standard normal via Box-Muller; consumes counters 2n and 2n+1 of the
// stream, so normal n is independent of evaluation order.
inline double normal_at(std::uint64_t key, std::uint64_t n) {
  const double u1 = uniform_pos_at(key, 2 * n);
  const double u2 = uniform_at(key, 2 * n + 1);
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace rng

}  // namespace spdelab
