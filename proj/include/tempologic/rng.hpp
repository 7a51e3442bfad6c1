#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace tempologic {

// Derives an independent stream seed for child task `index` of `seed`.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index);

// Seeded generator with distribution helpers implemented locally, so that
// sampled values are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double exponential(double rate = 1.0);
  double gumbel();

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

  Rng child(std::uint64_t index) { return Rng(child_seed(engine_(), index)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace tempologic
