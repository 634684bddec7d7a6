#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace mmattack {

// FNV-1a 64-bit. Fixed public hash; also used for trigram binning and
// config hashing so reports are comparable across implementations.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Counter-based splittable PRNG.
//
// A stream is identified by a 64-bit key derived from (seed, labels...).
// Draw i is splitmix64_mix(key + (i+1) * golden_gamma), so streams are
// pure functions of (key, counter): the same (seed, instance id, purpose)
// always replays the same sequence no matter what other streams were
// consumed before. derive() never advances the parent stream.
class SplitRng {
public:
  explicit SplitRng(std::uint64_t seed) : key_(mix(seed ^ 0x6d6d61747461636bull)) {}

  SplitRng derive(std::string_view label) const {
    SplitRng child;
    child.key_ = mix(key_ ^ fnv1a64(label));
    return child;
  }

  std::uint64_t next_u64() {
    counter_ += 1;
    return mix(key_ + counter_ * 0x9e3779b97f4a7c15ull);
  }

  // Uniform in [0, 1), 53 mantissa bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + next_double() * (hi - lo); }

  // Uniform index in [0, n). Bias is O(n / 2^64), irrelevant at this scale.
  std::size_t uniform_index(std::size_t n) {
    __extension__ typedef unsigned __int128 u128;
    return static_cast<std::size_t>((static_cast<u128>(next_u64()) * n) >> 64);
  }

  bool next_bool() { return (next_u64() & 1u) != 0; }

private:
  SplitRng() = default;

  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// Root stream for one instance of work. All randomness in the engine flows
// through streams derived from here.
inline SplitRng derive_rng(std::uint64_t seed, std::string_view instance_id) {
  return SplitRng(seed).derive(instance_id);
}

}  // namespace mmattack
