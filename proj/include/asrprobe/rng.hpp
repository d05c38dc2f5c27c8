#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <utility>

namespace asrprobe {

// SplitMix64 (Steele, Lea & Flood 2014). The generator is a counter: the k-th
// output is mix(seed + k * kGamma), which makes streams trivial to reproduce
// in any language.
inline constexpr const char* kRngName = "splitmix64/v1";

inline constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit constexpr Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  constexpr std::uint64_t next() {
    state_ += kGamma;
    return mix64(state_);
  }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  constexpr std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t x = next();
      if (x >= threshold) return x % n;
    }
  }

  /// Seed this generator was constructed with.
  constexpr std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
};

/// Fisher-Yates, walking from the back: for i = n-1 .. 1 swap(i, below(i+1)).
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

/// Folds a list of fields into a seed: h = master, then
/// h = mix64((h + kGamma) xor f) for each field in order.
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> fields) {
  std::uint64_t h = master;
  for (std::uint64_t f : fields) h = mix64((h + kGamma) ^ f);
  return h;
}

}  // namespace asrprobe
