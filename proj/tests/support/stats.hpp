#pragma once

// Test-side statistical oracles, independent of the library implementations.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace teststats {

// Regularized lower incomplete gamma P(a, x) via series / continued fraction.
inline double gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw std::invalid_argument("gamma_p domain");
  if (x == 0.0) return 0.0;
  const double gln = std::lgamma(a);
  if (x < a + 1.0) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 100000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - gln);
  }
  // Lentz continued fraction for Q(a, x).
  double b = x + 1.0 - a;
  double c = 1e308;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - gln) * h;
}

// CDF of Gamma(shape, scale).
inline double gamma_cdf(double x, double shape, double scale) {
  if (x <= 0.0) return 0.0;
  return gamma_p(shape, x / scale);
}

// Two-sided KS statistic of samples against a continuous CDF.
inline double ks_statistic(std::vector<double> samples,
                           const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

// Asymptotic KS critical value at the given significance.
inline double ks_critical(double alpha, std::size_t n) {
  return std::sqrt(-0.5 * std::log(alpha / 2.0)) /
         std::sqrt(static_cast<double>(n));
}

// Renyi divergence of one step of the subsampled Gaussian mechanism by
// direct numeric integration (Simpson), used as an oracle for the analytic
// accountant. mu0 = N(0, sigma^2), mu = (1-q) mu0 + q N(1, sigma^2).
inline double rdp_numeric(double q, double sigma, double alpha,
                          long long intervals = 400000) {
  const double lo = -(40.0 * sigma + 10.0);
  const double hi = alpha * sigma * sigma + 40.0 * sigma + 10.0;
  const double h = (hi - lo) / static_cast<double>(intervals);
  const auto log_p0 = [&](double x) {
    return -0.5 * x * x / (sigma * sigma) -
           std::log(sigma * std::sqrt(2.0 * M_PI));
  };
  const auto log_p1 = [&](double x) {
    return -0.5 * (x - 1.0) * (x - 1.0) / (sigma * sigma) -
           std::log(sigma * std::sqrt(2.0 * M_PI));
  };
  const auto integrand = [&](double x) {
    const double lp0 = log_p0(x);
    const double lp1 = log_p1(x);
    const double hi_l = std::max(lp0, lp1);
    const double lp = hi_l + std::log((1.0 - q) * std::exp(lp0 - hi_l) +
                                      q * std::exp(lp1 - hi_l));
    return std::exp((1.0 - alpha) * lp0 + alpha * lp);
  };
  double sum = integrand(lo) + integrand(hi);
  for (long long i = 1; i < intervals; ++i) {
    const double x = lo + h * static_cast<double>(i);
    sum += integrand(x) * (i % 2 == 1 ? 4.0 : 2.0);
  }
  const double a_alpha = sum * h / 3.0;
  return std::log(a_alpha) / (alpha - 1.0);
}

}  // namespace teststats
