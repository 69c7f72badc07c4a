#include "fedspd/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "fedspd/rng.hpp"
#include "fedspd/util.hpp"

namespace fedspd::model {

namespace {

constexpr double kProbClamp = 1e-12;

void check_dimension(const LogisticModel& m, const embed::EmbeddingVector& x) {
  if (m.weights.size() != x.size()) {
    throw std::invalid_argument(
        "dimension mismatch: model has " + std::to_string(m.weights.size()) +
        ", example has " + std::to_string(x.size()));
  }
}

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double predict_proba(const LogisticModel& m, const embed::EmbeddingVector& x) {
  check_dimension(m, x);
  double z = m.bias;
  for (std::size_t i = 0; i < x.size(); ++i) z += m.weights[i] * x[i];
  return stable_sigmoid(z);
}

double bce_loss(const LogisticModel& m,
                const std::vector<TrainingExample>& batch) {
  if (batch.empty()) throw std::invalid_argument("bce_loss: empty batch");
  double total = 0.0;
  for (const auto& ex : batch) {
    const double p =
        std::clamp(predict_proba(m, ex.features), kProbClamp, 1.0 - kProbClamp);
    total += ex.label == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / static_cast<double>(batch.size());
}

GradientVector example_gradient(const LogisticModel& m,
                                const TrainingExample& ex) {
  const double p = predict_proba(m, ex.features);
  const double residual = p - static_cast<double>(ex.label);
  GradientVector g;
  g.d_weights.resize(ex.features.size());
  for (std::size_t i = 0; i < ex.features.size(); ++i) {
    g.d_weights[i] = residual * ex.features[i];
  }
  g.d_bias = residual;
  return g;
}

LogisticModel sgd_epoch(const LogisticModel& m,
                        const std::vector<TrainingExample>& data, double lr,
                        int batch_size, std::uint64_t rng_seed, double l2) {
  if (data.empty()) throw std::invalid_argument("sgd_epoch: empty data");
  if (lr < 0.0) throw std::invalid_argument("sgd_epoch: lr must be >= 0");
  if (batch_size < 1) {
    throw std::invalid_argument("sgd_epoch: batch_size must be >= 1");
  }
  LogisticModel out = m;
  rng::Rng shuffle_rng(rng::derive_seed(rng_seed, rng::kTagShuffle));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_rng.shuffle(order);

  const std::size_t bs = static_cast<std::size_t>(batch_size);
  std::vector<double> grad_sum(out.weights.size());
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::fill(grad_sum.begin(), grad_sum.end(), 0.0);
    double bias_sum = 0.0;
    for (std::size_t k = start; k < end; ++k) {
      const auto& ex = data[order[k]];
      check_dimension(out, ex.features);
      GradientVector g = example_gradient(out, ex);
      if (l2 != 0.0) {
        for (std::size_t i = 0; i < grad_sum.size(); ++i) {
          g.d_weights[i] += l2 * out.weights[i];
        }
      }
      for (std::size_t i = 0; i < grad_sum.size(); ++i) {
        grad_sum[i] += g.d_weights[i];
      }
      bias_sum += g.d_bias;
    }
    const double count = static_cast<double>(end - start);
    for (std::size_t i = 0; i < grad_sum.size(); ++i) {
      out.weights[i] -= lr * (grad_sum[i] / count);
    }
    out.bias -= lr * (bias_sum / count);
  }
  return out;
}

std::string to_checkpoint(const LogisticModel& m) {
  std::string out = "fedspd-logistic v1\n";
  out += "dim " + std::to_string(m.weights.size()) + "\n";
  out += "bias " + util::format_double(m.bias) + "\n";
  for (const double w : m.weights) {
    out += util::format_double(w);
    out += '\n';
  }
  return out;
}

LogisticModel from_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "fedspd-logistic v1") {
    throw std::runtime_error("checkpoint: bad magic line");
  }
  std::string word;
  std::size_t dim = 0;
  if (!(in >> word >> dim) || word != "dim") {
    throw std::runtime_error("checkpoint: missing dim");
  }
  LogisticModel m;
  std::string bias_text;
  if (!(in >> word >> bias_text) || word != "bias") {
    throw std::runtime_error("checkpoint: missing bias");
  }
  m.bias = std::strtod(bias_text.c_str(), nullptr);
  m.weights.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    std::string w;
    if (!(in >> w)) throw std::runtime_error("checkpoint: truncated weights");
    m.weights[i] = std::strtod(w.c_str(), nullptr);
  }
  return m;
}

}  // namespace fedspd::model
