#include "fedspd/dp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace fedspd::dp {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  const double lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double log_sub(double a, double b) {
  if (b == kNegInf) return a;
  if (b > a) throw std::runtime_error("rdp: log_sub of a larger value");
  if (a == b) return kNegInf;
  return a + std::log1p(-std::exp(b - a));
}

// log(erfc(x)), stable for large positive x.
double log_erfc(double x) {
  if (x < 8.0) return std::log(std::erfc(x));
  // Asymptotic expansion erfc(x) ~ exp(-x^2) / (x sqrt(pi)) (1 - 1/(2x^2) + ...)
  const double x2 = x * x;
  return -x2 - std::log(x) - 0.5 * std::log(std::numbers::pi) +
         std::log1p(-0.5 / x2 + 0.75 / (x2 * x2));
}

// (log|Gamma(x)|, sign) for any non-pole x, via reflection for x <= 0.
std::pair<double, int> log_abs_gamma(double x) {
  if (x > 0.0) return {std::lgamma(x), 1};
  const double s = std::sin(std::numbers::pi * x);
  if (s == 0.0) throw std::domain_error("gamma pole");
  const double value =
      std::log(std::numbers::pi) - std::log(std::abs(s)) - std::lgamma(1.0 - x);
  return {value, s > 0.0 ? 1 : -1};
}

// (log|binom(alpha, i)|, sign) for real alpha, integer i >= 0.
std::pair<double, int> log_abs_binom(double alpha, long long i) {
  const auto num = std::lgamma(alpha + 1.0);
  const auto den1 = std::lgamma(static_cast<double>(i) + 1.0);
  const auto [den2, sign2] = log_abs_gamma(alpha - static_cast<double>(i) + 1.0);
  return {num - den1 - den2, sign2};
}

// log A(alpha) of one step of the subsampled Gaussian, integer alpha.
double log_a_int(double q, double sigma, long long alpha) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  double log_a = kNegInf;
  for (long long i = 0; i <= alpha; ++i) {
    const auto [log_coef, sign] = log_abs_binom(static_cast<double>(alpha), i);
    (void)sign;  // positive for integer alpha
    const double term = log_coef + static_cast<double>(i) * log_q +
                        static_cast<double>(alpha - i) * log_1mq +
                        static_cast<double>(i * i - i) / (2.0 * sigma * sigma);
    log_a = log_add(log_a, term);
  }
  return log_a;
}

// log A(alpha) for fractional alpha via the two-sided series.
double log_a_frac(double q, double sigma, double alpha) {
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  double log_a0 = kNegInf;
  double log_a1 = kNegInf;
  for (long long i = 0; i < 100000; ++i) {
    const auto [log_coef, sign] = log_abs_binom(alpha, i);
    const double di = static_cast<double>(i);
    const double j = alpha - di;

    const double log_t0 = log_coef + di * log_q + j * log_1mq;
    const double log_t1 = log_coef + j * log_q + di * log_1mq;
    const double log_e0 =
        std::log(0.5) + log_erfc((di - z0) / (std::numbers::sqrt2 * sigma));
    const double log_e1 =
        std::log(0.5) + log_erfc((z0 - j) / (std::numbers::sqrt2 * sigma));
    const double log_s0 = log_t0 + (di * di - di) / (2.0 * sigma * sigma) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;

    if (sign > 0) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (di > alpha && std::max(log_s0, log_s1) < -40.0) break;
  }
  return log_add(log_a0, log_a1);
}

}  // namespace

std::vector<double> clip_vector(const std::vector<double>& v, double bound) {
  if (bound <= 0.0) {
    throw std::invalid_argument("clip_vector: bound must be positive");
  }
  double norm_sq = 0.0;
  for (const double x : v) {
    if (!std::isfinite(x)) {
      throw std::invalid_argument("clip_vector: non-finite input");
    }
    norm_sq += x * x;
  }
  const double norm = std::sqrt(norm_sq);
  if (norm <= bound) return v;
  std::vector<double> out(v.size());
  const double scale = bound / norm;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * scale;
  return out;
}

std::vector<double> gaussian_noise(int dim, double sigma, rng::Rng& rng) {
  if (sigma < 0.0) {
    throw std::invalid_argument("gaussian_noise: sigma must be >= 0");
  }
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  if (sigma == 0.0) return out;
  for (auto& x : out) x = sigma * rng.normal();
  return out;
}

model::LogisticModel dpsgd_epoch(const model::LogisticModel& m,
                                 const std::vector<model::TrainingExample>& data,
                                 const DpSgdParams& params, double lr,
                                 std::uint64_t rng_seed, double l2,
                                 DpSgdTrace* trace) {
  if (data.empty()) throw std::invalid_argument("dpsgd_epoch: empty data");
  if (params.batch_size < 1 ||
      static_cast<std::size_t>(params.batch_size) > data.size()) {
    throw std::invalid_argument("dpsgd_epoch: batch size must be in [1, n]");
  }
  if (params.clip_norm <= 0.0) {
    throw std::invalid_argument("dpsgd_epoch: clip_norm must be positive");
  }
  if (params.noise_multiplier < 0.0) {
    throw std::invalid_argument("dpsgd_epoch: noise_multiplier must be >= 0");
  }

  model::LogisticModel out = m;
  rng::Rng shuffle_rng(rng::derive_seed(rng_seed, rng::kTagShuffle));
  rng::Rng noise_rng(rng::derive_seed(rng_seed, rng::kTagGradNoise));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng.shuffle(order);

  const auto dim = out.weights.size();
  const double sigma = params.noise_multiplier * params.clip_norm;
  const std::size_t bs = static_cast<std::size_t>(params.batch_size);
  std::vector<double> grad_sum(dim);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
    double bias_sum = 0.0;
    for (std::size_t k = start; k < end; ++k) {
      const auto& ex = data[order[k]];
      model::GradientVector g = model::example_gradient(out, ex);
      if (l2 != 0.0) {
        for (std::size_t i = 0; i < dim; ++i) {
          g.d_weights[i] += l2 * out.weights[i];
        }
      }
      // Clip the concatenated (weights, bias) gradient.
      double norm_sq = g.d_bias * g.d_bias;
      for (const double x : g.d_weights) norm_sq += x * x;
      const double norm = std::sqrt(norm_sq);
      double clipped_norm = norm;
      if (norm > params.clip_norm) {
        const double scale = params.clip_norm / norm;
        for (auto& x : g.d_weights) x *= scale;
        g.d_bias *= scale;
        clipped_norm = params.clip_norm;
        if (trace != nullptr) ++trace->clipped_examples;
      }
      if (trace != nullptr) {
        trace->max_clipped_norm = std::max(trace->max_clipped_norm, clipped_norm);
        ++trace->total_examples;
      }
      for (std::size_t i = 0; i < dim; ++i) grad_sum[i] += g.d_weights[i];
      bias_sum += g.d_bias;
    }
    if (sigma > 0.0) {
      for (std::size_t i = 0; i < dim; ++i) {
        grad_sum[i] += sigma * noise_rng.normal();
      }
      bias_sum += sigma * noise_rng.normal();
    }
    const double count = static_cast<double>(end - start);
    for (std::size_t i = 0; i < dim; ++i) {
      out.weights[i] -= lr * (grad_sum[i] / count);
    }
    out.bias -= lr * (bias_sum / count);
  }
  return out;
}

std::vector<double> default_rdp_orders() {
  return {1.25, 1.5, 1.75, 2,  2.25, 2.5, 3,  3.5, 4,  4.5, 5,   6,   7,
          8,    9,   10,   12, 14,   16,  20, 24,  28, 32,  40,  48,  56,
          64,   80,  96,   128, 160, 192, 256, 320, 384, 448, 512};
}

RdpCurve rdp_subsampled_gaussian(double q, double z, long long steps,
                                 std::span<const double> orders) {
  if (q <= 0.0 || q > 1.0) {
    throw std::invalid_argument("rdp: sampling rate must be in (0, 1]");
  }
  if (z <= 0.0) {
    throw std::invalid_argument(
        "rdp: noise multiplier must be positive (z = 0 has unbounded budget)");
  }
  if (steps < 1) throw std::invalid_argument("rdp: steps must be >= 1");
  RdpCurve curve;
  curve.orders.assign(orders.begin(), orders.end());
  curve.rdp_values.reserve(orders.size());
  for (const double alpha : orders) {
    if (alpha <= 1.0) {
      throw std::invalid_argument("rdp: orders must be > 1");
    }
    double per_step;
    if (q == 1.0) {
      per_step = alpha / (2.0 * z * z);
      curve.rdp_values.push_back(per_step * static_cast<double>(steps));
      continue;
    }
    const bool integral = std::floor(alpha) == alpha && alpha <= 4096.0;
    const double log_a =
        integral ? log_a_int(q, z, static_cast<long long>(alpha))
                 : log_a_frac(q, z, alpha);
    per_step = log_a / (alpha - 1.0);
    if (per_step < 0.0) {
      if (per_step < -1e-8) {
        throw std::runtime_error("rdp: negative value at order " +
                                 std::to_string(alpha));
      }
      per_step = 0.0;
    }
    curve.rdp_values.push_back(per_step * static_cast<double>(steps));
  }
  return curve;
}

DpConversion rdp_to_dp_detail(const RdpCurve& curve, double delta) {
  if (curve.orders.empty() || curve.orders.size() != curve.rdp_values.size()) {
    throw std::invalid_argument("rdp_to_dp: empty or inconsistent curve");
  }
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("rdp_to_dp: delta must be in (0, 1)");
  }
  DpConversion best;
  best.delta = delta;
  best.epsilon = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < curve.orders.size(); ++i) {
    const double alpha = curve.orders[i];
    const double eps =
        curve.rdp_values[i] + std::log(1.0 / delta) / (alpha - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.best_order = alpha;
    }
  }
  return best;
}

PrivacyBudget rdp_to_dp(const RdpCurve& curve, double delta) {
  const auto detail = rdp_to_dp_detail(curve, delta);
  return {detail.epsilon, detail.delta};
}

std::vector<double> metric_dp_perturb(const std::vector<double>& x,
                                      const MetricDpParams& params,
                                      rng::Rng& rng) {
  if (params.eta <= 0.0) {
    throw std::invalid_argument("metric_dp_perturb: eta must be positive");
  }
  if (static_cast<std::size_t>(params.dimension) != x.size()) {
    throw std::invalid_argument("metric_dp_perturb: dimension mismatch");
  }
  const auto d = x.size();
  std::vector<double> direction(d);
  double norm_sq = 0.0;
  for (auto& v : direction) {
    v = rng.normal();
    norm_sq += v * v;
  }
  const double norm = std::sqrt(norm_sq);
  const double magnitude =
      rng.gamma(static_cast<double>(params.dimension), 1.0 / params.eta);
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = x[i] + magnitude * direction[i] / norm;
  }
  return out;
}

std::vector<double> dp_fedavg_noise(const std::vector<double>& mean_update,
                                    const DpFedAvgParams& params,
                                    rng::Rng& rng) {
  if (params.clients_per_round < 1) {
    throw std::invalid_argument("dp_fedavg_noise: clients_per_round must be >= 1");
  }
  if (params.update_clip <= 0.0) {
    throw std::invalid_argument("dp_fedavg_noise: update_clip must be positive");
  }
  if (params.noise_multiplier < 0.0) {
    throw std::invalid_argument("dp_fedavg_noise: noise_multiplier must be >= 0");
  }
  if (params.noise_multiplier == 0.0) return mean_update;
  const double sigma = params.noise_multiplier * params.update_clip /
                       static_cast<double>(params.clients_per_round);
  std::vector<double> out(mean_update.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mean_update[i] + sigma * rng.normal();
  }
  return out;
}

double adaptive_clip_update(double clip, double noisy_unclipped_fraction,
                            double target_quantile, double clip_lr) {
  if (clip <= 0.0) {
    throw std::invalid_argument("adaptive_clip_update: clip must be positive");
  }
  return clip * std::exp(-clip_lr * (noisy_unclipped_fraction - target_quantile));
}

DpConversion user_level_budget_detail(const DpFedAvgParams& params) {
  if (params.noise_multiplier <= 0.0) {
    throw std::invalid_argument(
        "user_level_budget: noise multiplier must be positive");
  }
  if (params.total_clients < 1 || params.clients_per_round < 1 ||
      params.clients_per_round > params.total_clients) {
    throw std::invalid_argument("user_level_budget: need 1 <= m <= N");
  }
  if (params.rounds < 1) {
    throw std::invalid_argument("user_level_budget: rounds must be >= 1");
  }
  const double q = static_cast<double>(params.clients_per_round) /
                   static_cast<double>(params.total_clients);
  const auto orders = default_rdp_orders();
  const auto curve = rdp_subsampled_gaussian(q, params.noise_multiplier,
                                             params.rounds, orders);
  return rdp_to_dp_detail(curve, params.delta);
}

PrivacyBudget user_level_budget(const DpFedAvgParams& params) {
  const auto detail = user_level_budget_detail(params);
  return {detail.epsilon, detail.delta};
}

}  // namespace fedspd::dp
