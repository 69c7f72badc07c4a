#pragma once

#include <optional>
#include <vector>

#include "fedspd/corpus.hpp"
#include "fedspd/embed.hpp"
#include "fedspd/model.hpp"

namespace fedspd::espd {
struct EspdConfig;
}

namespace fedspd::metrics {

struct ConfusionCounts {
  long long tp = 0;
  long long fp = 0;
  long long tn = 0;
  long long fn = 0;
};

struct EvaluationReport {
  double f1 = 0.0;
  double recall = 0.0;
  std::optional<double> precision;  // undefined when nothing was predicted positive
  std::optional<double> speed;      // undefined when no warnings were raised
  std::optional<double> fpr;        // undefined without negatives
  double f_latency = 0.0;           // 0 when speed is undefined
  double p = 0.0;                   // penalty rate used
  std::vector<int> latencies;
};

// -1 + 2 / (1 + e^(-p (l - 1))); zero at l = 1, approaching 1 as l grows.
double penalty(long long latency, double p);

// The rate at which penalty(median, p) = 0.5: p = ln(3) / (median - 1).
double derive_p(int median_messages);

// 1 - median penalty; even cardinality takes the midpoint of the central pair.
double speed(const std::vector<int>& latencies, double p);

double f_latency(double f1, double speed);

EvaluationReport report(const ConfusionCounts& counts,
                        const std::vector<int>& latencies, double p);

struct CalibrationResult {
  double threshold = 0.0;
  double achieved_fpr = 0.0;
  bool attainable = false;
};

// Smallest threshold, among the configured threshold and all observed window
// scores above it, whose streaming evaluation of the negatives has
// FPR <= target. Unattainable targets return the best achievable point with
// attainable = false.
CalibrationResult calibrate_threshold(
    const model::LogisticModel& m, const embed::Embedder& embedder,
    const std::vector<corpus::Conversation>& negatives,
    const espd::EspdConfig& cfg, double target_fpr = 0.01);

}  // namespace fedspd::metrics
