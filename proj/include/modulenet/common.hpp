#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace modulenet {

using Rng = std::mt19937_64;

/// FNV-1a, used wherever a hash must be stable across runs and platforms.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 1469598103934665603ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// Derives an independent child seed from a base seed and a label.
inline uint64_t derive_seed(uint64_t base, std::string_view label) {
  return fnv1a(label, fnv1a(std::to_string(base)));
}

}  // namespace modulenet
