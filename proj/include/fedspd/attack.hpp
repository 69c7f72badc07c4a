#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fedspd/embed.hpp"

namespace fedspd::attack {

struct InversionResult {
  double eta = 0.0;
  double accuracy = 0.0;
  long long n_trials = 0;
};

// Nearest-neighbor recovery: each perturbed vector is matched to its closest
// reference under Euclidean distance; a trial succeeds when the match is the
// true original. Ties resolve to the lowest index.
double invert(
    const std::vector<embed::EmbeddingVector>& reference,
    const std::vector<std::pair<std::size_t, embed::EmbeddingVector>>& perturbed);

// Perturbs every reference vector with the metric-DP mechanism at each eta
// and measures inversion accuracy. Deterministic given the seed.
std::vector<InversionResult> sweep_eta(
    const std::vector<embed::EmbeddingVector>& reference,
    const std::vector<double>& etas, std::uint64_t rng_seed);

// The standard sweep: 5, 10, ..., 55.
std::vector<double> default_eta_sweep();

}  // namespace fedspd::attack
