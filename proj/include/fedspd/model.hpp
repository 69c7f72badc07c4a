#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedspd/embed.hpp"

namespace fedspd::model {

struct LogisticModel {
  std::vector<double> weights;
  double bias = 0.0;

  static LogisticModel zeros(int dimension) {
    return {std::vector<double>(static_cast<std::size_t>(dimension), 0.0), 0.0};
  }
  int dimension() const { return static_cast<int>(weights.size()); }
};

struct TrainingExample {
  embed::EmbeddingVector features;
  int label = 0;
};

struct GradientVector {
  std::vector<double> d_weights;
  double d_bias = 0.0;
};

double predict_proba(const LogisticModel& m, const embed::EmbeddingVector& x);

// Mean binary cross entropy with probabilities clamped to [1e-12, 1-1e-12].
double bce_loss(const LogisticModel& m, const std::vector<TrainingExample>& batch);

GradientVector example_gradient(const LogisticModel& m,
                                const TrainingExample& ex);

// One pass of seeded mini-batch SGD: shuffle, then average-gradient steps in
// order. A trailing partial batch is trained on as well.
LogisticModel sgd_epoch(const LogisticModel& m,
                        const std::vector<TrainingExample>& data, double lr,
                        int batch_size, std::uint64_t rng_seed,
                        double l2 = 0.0);

// Checkpoint as decimal text; round-trips bit-exactly.
std::string to_checkpoint(const LogisticModel& m);
LogisticModel from_checkpoint(const std::string& text);

}  // namespace fedspd::model
