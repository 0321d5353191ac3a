#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace mmstack {

// Seeded generator with platform-independent distributions. The standard
// library distributions are implementation-defined, so uniform/normal
// sampling and shuffling are spelled out here on top of mt19937_64, whose
// output sequence is fixed by the standard.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound); bound must be positive.
  std::uint64_t below(std::uint64_t bound);

  // Standard normal via Box-Muller; caches the second variate.
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes);

// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);

// Child seed for a named unit of work (e.g. one modality/fold model), a pure
// function of its inputs so results do not depend on scheduling.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag, std::uint64_t index = 0);

}  // namespace mmstack
