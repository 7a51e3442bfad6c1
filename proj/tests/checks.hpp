#pragma once

#include <cstdint>
#include <string>

#include "tempologic/synthetic.hpp"

// Numerical checks shared by the unit tests and the acceptance binary.
namespace checks {

// Worst |analytic - central difference| / max(|analytic|, |numeric|, 1)
// over every parameter at `points` random parameter points on a random
// 10-sequence dataset.
double gradient_max_error(std::uint64_t seed, int points = 20, double h = 1e-5);

// Worst relative error of the compensator against a midpoint Riemann sum
// with `grid` points, over `sequences` random sequences and models.
double compensator_max_error(std::uint64_t seed, int sequences = 50, int grid = 100000);

// Count of random vectors (N <= 12) where min <= softmin <= min + ln(N)/rho
// fails, for each rho in {1, 10, 100}.
int softmin_violations(std::uint64_t seed, int vectors = 1000);

struct GumbelLawResult {
  int cells = 0;
  int outside = 0;  // frequencies more than 3 standard errors from softmax
};
GumbelLawResult gumbel_law(std::uint64_t seed, int rows = 20, int draws = 100000);

struct GeneratorStats {
  std::size_t background = 0;
  double mean_count = 0.0;
  double expected = 0.0;
  double standard_error = 0.0;
  std::size_t assigned = 0;
  std::size_t satisfied = 0;  // assigned sequences whose rule holds with margin > delta

  bool ok() const;
  std::string describe() const;
};
GeneratorStats generator_stats(const tempologic::GroundTruthSpec& spec, std::size_t n, std::uint64_t seed);

}  // namespace checks
