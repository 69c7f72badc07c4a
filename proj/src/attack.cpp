#include "fedspd/attack.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fedspd/dp.hpp"
#include "fedspd/rng.hpp"
#include "fedspd/util.hpp"

namespace fedspd::attack {

double invert(
    const std::vector<embed::EmbeddingVector>& reference,
    const std::vector<std::pair<std::size_t, embed::EmbeddingVector>>& perturbed) {
  if (reference.empty()) {
    throw std::invalid_argument("invert: empty reference set");
  }
  const auto dim = reference.front().size();
  for (const auto& r : reference) {
    if (r.size() != dim) {
      throw std::invalid_argument("invert: reference dimension mismatch");
    }
  }
  std::vector<double> ref_norm_sq(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) {
    double s = 0.0;
    for (const double x : reference[i]) s += x * x;
    ref_norm_sq[i] = s;
  }

  std::atomic<long long> successes{0};
  util::parallel_for(perturbed.size(), [&](std::size_t k) {
    const auto& [true_index, p] = perturbed[k];
    if (true_index >= reference.size()) {
      throw std::invalid_argument("invert: perturbed index out of range");
    }
    if (p.size() != dim) {
      throw std::invalid_argument("invert: perturbed dimension mismatch");
    }
    // argmin over r of ||r||^2 - 2 r.p; ||p||^2 is constant per query.
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < reference.size(); ++i) {
      double dot = 0.0;
      const auto& r = reference[i];
      for (std::size_t j = 0; j < dim; ++j) dot += r[j] * p[j];
      const double score = ref_norm_sq[i] - 2.0 * dot;
      if (score < best_score) {
        best_score = score;
        best = i;
      }
    }
    if (best == true_index) successes.fetch_add(1, std::memory_order_relaxed);
  });
  if (perturbed.empty()) return 0.0;
  return static_cast<double>(successes.load()) /
         static_cast<double>(perturbed.size());
}

std::vector<InversionResult> sweep_eta(
    const std::vector<embed::EmbeddingVector>& reference,
    const std::vector<double>& etas, std::uint64_t rng_seed) {
  if (reference.empty()) {
    throw std::invalid_argument("sweep_eta: empty reference set");
  }
  for (const double eta : etas) {
    if (eta <= 0.0) {
      throw std::invalid_argument("sweep_eta: etas must be positive");
    }
  }
  const int dim = static_cast<int>(reference.front().size());
  std::vector<InversionResult> out;
  out.reserve(etas.size());
  for (std::size_t e = 0; e < etas.size(); ++e) {
    dp::MetricDpParams params{etas[e], dim};
    rng::Rng rng(rng::derive_seed(rng_seed, rng::kTagAttack, e));
    std::vector<std::pair<std::size_t, embed::EmbeddingVector>> perturbed;
    perturbed.reserve(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) {
      perturbed.push_back({i, dp::metric_dp_perturb(reference[i], params, rng)});
    }
    InversionResult result;
    result.eta = etas[e];
    result.accuracy = invert(reference, perturbed);
    result.n_trials = static_cast<long long>(reference.size());
    out.push_back(result);
  }
  return out;
}

std::vector<double> default_eta_sweep() {
  return {5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55};
}

}  // namespace fedspd::attack
