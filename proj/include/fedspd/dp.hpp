#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedspd/model.hpp"
#include "fedspd/rng.hpp"

namespace fedspd::dp {

struct PrivacyBudget {
  double epsilon = 0.0;
  double delta = 0.0;
};

struct DpSgdParams {
  double clip_norm = 1.0;        // per-example gradient clip C
  double noise_multiplier = 0.0; // z, noise std = z * C
  int batch_size = 32;
  int dataset_size = 0;
  double delta = 1e-5;
};

struct MetricDpParams {
  double eta = 20.0;
  int dimension = 768;
};

struct DpFedAvgParams {
  double update_clip = 1.0;       // S
  double noise_multiplier = 0.0;  // z, server noise std = z * S / m
  int clients_per_round = 0;      // m
  int total_clients = 0;          // N
  int rounds = 0;                 // T
  double delta = 1e-5;
  bool adaptive = false;
  double target_quantile = 0.5;      // gamma
  double clip_lr = 0.2;              // learning rate for the clip level
  double indicator_noise_std = 0.0;  // noise on the unclipped count
};

struct RdpCurve {
  std::vector<double> orders;
  std::vector<double> rdp_values;
};

struct DpConversion {
  double epsilon = 0.0;
  double delta = 0.0;
  double best_order = 0.0;
};

// L2 projection onto the ball of the given radius.
std::vector<double> clip_vector(const std::vector<double>& v, double bound);

std::vector<double> gaussian_noise(int dim, double sigma, rng::Rng& rng);

struct DpSgdTrace {
  double max_clipped_norm = 0.0;
  std::size_t clipped_examples = 0;
  std::size_t total_examples = 0;
};

// Mini-batch SGD with per-example clipping and Gaussian noise on the summed
// gradient. Shares the shuffle stream with sgd_epoch, so z=0 with a clip
// bound above every raw gradient norm reproduces sgd_epoch exactly.
model::LogisticModel dpsgd_epoch(const model::LogisticModel& m,
                                 const std::vector<model::TrainingExample>& data,
                                 const DpSgdParams& params, double lr,
                                 std::uint64_t rng_seed, double l2 = 0.0,
                                 DpSgdTrace* trace = nullptr);

std::vector<double> default_rdp_orders();

// RDP of the subsampled Gaussian mechanism composed over `steps` steps.
// q = 1 reduces to the closed form alpha * steps / (2 z^2).
RdpCurve rdp_subsampled_gaussian(double q, double z, long long steps,
                                 std::span<const double> orders);

// Classic conversion: epsilon = min over orders of
// rdp(alpha) + log(1/delta) / (alpha - 1).
DpConversion rdp_to_dp_detail(const RdpCurve& curve, double delta);
PrivacyBudget rdp_to_dp(const RdpCurve& curve, double delta);

// Additive noise with density proportional to exp(-eta * ||n||_2): uniform
// direction, Gamma(d, 1/eta) magnitude.
std::vector<double> metric_dp_perturb(const std::vector<double>& x,
                                      const MetricDpParams& params,
                                      rng::Rng& rng);

// Server-side Gaussian noise calibrated to the S/m sensitivity of the flat
// average of m clipped updates.
std::vector<double> dp_fedavg_noise(const std::vector<double>& mean_update,
                                    const DpFedAvgParams& params,
                                    rng::Rng& rng);

// Geometric clip update toward the target unclipped quantile.
double adaptive_clip_update(double clip, double noisy_unclipped_fraction,
                            double target_quantile, double clip_lr);

// User-level budget of DP-FedAvg: subsampled Gaussian at q = m/N over T
// rounds, converted at params.delta.
DpConversion user_level_budget_detail(const DpFedAvgParams& params);
PrivacyBudget user_level_budget(const DpFedAvgParams& params);

}  // namespace fedspd::dp
