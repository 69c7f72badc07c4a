#include "fedspd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "fedspd/espd.hpp"
#include "fedspd/util.hpp"

namespace fedspd::metrics {

double penalty(long long latency, double p) {
  if (latency < 1) throw std::invalid_argument("penalty: latency must be >= 1");
  if (p <= 0.0) throw std::invalid_argument("penalty: rate must be positive");
  return -1.0 + 2.0 / (1.0 + std::exp(-p * static_cast<double>(latency - 1)));
}

double derive_p(int median_messages) {
  if (median_messages < 2) {
    throw std::invalid_argument("derive_p: median must be >= 2");
  }
  return std::log(3.0) / static_cast<double>(median_messages - 1);
}

double speed(const std::vector<int>& latencies, double p) {
  if (latencies.empty()) {
    throw std::invalid_argument("speed: no warnings were raised");
  }
  std::vector<double> penalties;
  penalties.reserve(latencies.size());
  for (const int l : latencies) penalties.push_back(penalty(l, p));
  std::sort(penalties.begin(), penalties.end());
  const std::size_t n = penalties.size();
  const double median =
      (n % 2 == 1) ? penalties[n / 2]
                   : 0.5 * (penalties[n / 2 - 1] + penalties[n / 2]);
  return 1.0 - median;
}

double f_latency(double f1, double speed) { return f1 * speed; }

EvaluationReport report(const ConfusionCounts& counts,
                        const std::vector<int>& latencies, double p) {
  if (counts.tp < 0 || counts.fp < 0 || counts.tn < 0 || counts.fn < 0) {
    throw std::invalid_argument("report: negative confusion counts");
  }
  if (counts.tp + counts.fn < 1) {
    throw std::invalid_argument("report: no positive conversations in test set");
  }
  EvaluationReport rep;
  rep.p = p;
  rep.latencies = latencies;
  rep.recall = static_cast<double>(counts.tp) /
               static_cast<double>(counts.tp + counts.fn);
  if (counts.tp + counts.fp > 0) {
    rep.precision = static_cast<double>(counts.tp) /
                    static_cast<double>(counts.tp + counts.fp);
  }
  if (rep.precision.has_value() && *rep.precision + rep.recall > 0.0) {
    rep.f1 = 2.0 * *rep.precision * rep.recall / (*rep.precision + rep.recall);
  }
  if (counts.fp + counts.tn > 0) {
    rep.fpr = static_cast<double>(counts.fp) /
              static_cast<double>(counts.fp + counts.tn);
  }
  if (!latencies.empty()) {
    rep.speed = speed(latencies, p);
    rep.f_latency = f_latency(rep.f1, *rep.speed);
  }
  return rep;
}

CalibrationResult calibrate_threshold(
    const model::LogisticModel& m, const embed::Embedder& embedder,
    const std::vector<corpus::Conversation>& negatives,
    const espd::EspdConfig& cfg, double target_fpr) {
  if (negatives.empty()) {
    throw std::invalid_argument("calibrate_threshold: no negatives");
  }
  if (target_fpr < 0.0 || target_fpr >= 1.0) {
    throw std::invalid_argument("calibrate_threshold: target must be in [0, 1)");
  }

  // Probability traces are threshold-independent; collect them once.
  std::vector<std::vector<double>> traces(negatives.size());
  util::parallel_for(negatives.size(), [&](std::size_t i) {
    const auto verdict = espd::classify_stream(m, embedder, negatives[i], cfg);
    traces[i].reserve(verdict.window_trace.size());
    for (const auto& step : verdict.window_trace) {
      traces[i].push_back(step.probability);
    }
  });

  // Candidate grid: the configured threshold plus every observed score above
  // it. Calibration only ever tightens the decision rule.
  std::set<double> grid_set = {cfg.proba_threshold};
  for (const auto& trace : traces) {
    for (const double s : trace) {
      if (s > cfg.proba_threshold) grid_set.insert(s);
    }
  }
  const std::vector<double> grid(grid_set.begin(), grid_set.end());

  const auto count_warned = [&](double threshold) {
    espd::EspdConfig at = cfg;
    at.proba_threshold = threshold;
    long long warned = 0;
    for (const auto& trace : traces) {
      if (espd::first_warning_step(trace, at).has_value()) ++warned;
    }
    return warned;
  };

  const auto n = static_cast<double>(negatives.size());
  const long long allowed = static_cast<long long>(std::floor(target_fpr * n));

  // The warned count is non-increasing in the threshold; binary search for
  // the first grid point meeting the target.
  std::size_t lo = 0;
  std::size_t hi = grid.size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (count_warned(grid[mid]) <= allowed) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  CalibrationResult result;
  const std::size_t pick = lo < grid.size() ? lo : grid.size() - 1;
  result.threshold = grid[pick];
  result.achieved_fpr = static_cast<double>(count_warned(grid[pick])) / n;
  result.attainable = lo < grid.size();
  return result;
}

}  // namespace fedspd::metrics
