#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace adaforge {

/// 64-bit FNV-1a. Used for config/spec hashes and derived seed streams; the
/// artifact needs stability across runs and platforms, not cryptography.
inline constexpr uint64_t kFnvBasis = 1469598103934665603ULL;
inline constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvBasis) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a_u64(uint64_t x, uint64_t h = kFnvBasis) {
  for (int i = 0; i < 8; ++i) {
    h ^= static_cast<unsigned char>(x >> (8 * i));
    h *= kFnvPrime;
  }
  return h;
}

/// Deterministic per-purpose sub-seed: independent random streams for
/// initialization, data generation, shuffling, ... all derived from one user
/// seed plus a stream label.
inline uint64_t sub_seed(uint64_t seed, std::string_view stream) {
  return fnv1a(stream, fnv1a_u64(seed));
}

inline std::string hex16(uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[x & 0xf];
    x >>= 4;
  }
  return s;
}

}  // namespace adaforge
