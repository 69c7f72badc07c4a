#include "fedspd/espd.hpp"

#include <algorithm>
#include <stdexcept>

#include "fedspd/util.hpp"

namespace fedspd::espd {

void validate(const EspdConfig& cfg) {
  if (cfg.window_len < 1) {
    throw std::invalid_argument("espd: window_len must be >= 1");
  }
  if (cfg.history_len < 1) {
    throw std::invalid_argument("espd: history_len must be >= 1");
  }
  if (cfg.skepticism < 1 || cfg.skepticism > cfg.history_len) {
    throw std::invalid_argument(
        "espd: skepticism must be in [1, history_len]");
  }
  // 1.0 is admitted so calibration can probe saturated window scores.
  if (cfg.proba_threshold <= 0.0 || cfg.proba_threshold > 1.0) {
    throw std::invalid_argument("espd: proba_threshold must be in (0, 1]");
  }
}

std::vector<std::span<const corpus::Message>> windows(
    const corpus::Conversation& conv, int window_len) {
  if (window_len < 1) {
    throw std::invalid_argument("windows: window_len must be >= 1");
  }
  if (conv.messages.empty()) {
    throw std::invalid_argument("windows: conversation has no messages");
  }
  const std::size_t n = conv.messages.size();
  const std::size_t l = static_cast<std::size_t>(window_len);
  std::vector<std::span<const corpus::Message>> out;
  if (n <= l) {
    out.push_back({conv.messages.data(), n});
    return out;
  }
  for (std::size_t start = 0; start + l <= n; ++start) {
    out.push_back({conv.messages.data() + start, l});
  }
  return out;
}

std::optional<std::size_t> first_warning_step(
    std::span<const double> probabilities, const EspdConfig& cfg) {
  validate(cfg);
  int positives = 0;
  const auto h = static_cast<std::size_t>(cfg.history_len);
  for (std::size_t step = 0; step < probabilities.size(); ++step) {
    if (step >= h &&
        probabilities[step - h] >= cfg.proba_threshold) {
      --positives;
    }
    if (probabilities[step] >= cfg.proba_threshold) ++positives;
    if (positives >= cfg.skepticism) return step;
  }
  return std::nullopt;
}

int latency_at_step(std::size_t step, std::size_t n_messages, int window_len) {
  if (n_messages <= static_cast<std::size_t>(window_len)) {
    return static_cast<int>(n_messages);
  }
  return static_cast<int>(step) + window_len;
}

StreamMonitor::StreamMonitor(const model::LogisticModel& m,
                             const embed::Embedder& embedder, EspdConfig cfg,
                             std::string conversation_id)
    : model_(m),
      embedder_(embedder),
      cfg_(cfg),
      conversation_id_(std::move(conversation_id)) {
  validate(cfg_);
}

void StreamMonitor::score_window(std::span<const corpus::Message> window) {
  const auto features = embedder_.embed(window, std::nullopt, conversation_id_);
  const double proba = model::predict_proba(model_, features);
  const int label = proba >= cfg_.proba_threshold ? 1 : 0;
  trace_.push_back({proba, label});

  recent_labels_.push_back(label);
  positives_in_history_ += label;
  if (recent_labels_.size() > static_cast<std::size_t>(cfg_.history_len)) {
    positives_in_history_ -= recent_labels_.front();
    recent_labels_.erase(recent_labels_.begin());
  }
  if (status_ == StreamStatus::kUndecided &&
      positives_in_history_ >= cfg_.skepticism) {
    status_ = StreamStatus::kWarned;
    warning_latency_ = window.back().index + 1;
  }
}

StreamStatus StreamMonitor::push(const corpus::Message& msg) {
  if (status_ == StreamStatus::kWarned) return status_;
  seen_.push_back(msg);
  if (seen_.size() >= static_cast<std::size_t>(cfg_.window_len)) {
    score_window({seen_.data() + seen_.size() -
                      static_cast<std::size_t>(cfg_.window_len),
                  static_cast<std::size_t>(cfg_.window_len)});
  }
  return status_;
}

ConversationVerdict StreamMonitor::finish() {
  if (status_ == StreamStatus::kUndecided && trace_.empty() && !seen_.empty()) {
    // Conversation shorter than the window: one full-content window.
    score_window({seen_.data(), seen_.size()});
  }
  ConversationVerdict verdict;
  verdict.warned = status_ == StreamStatus::kWarned;
  verdict.warning_latency = warning_latency_;
  verdict.window_trace = trace_;
  return verdict;
}

ConversationVerdict classify_stream(const model::LogisticModel& m,
                                    const embed::Embedder& embedder,
                                    const corpus::Conversation& conv,
                                    const EspdConfig& cfg) {
  if (conv.messages.empty()) {
    throw std::invalid_argument("classify_stream: conversation has no messages");
  }
  StreamMonitor monitor(m, embedder, cfg, conv.id);
  for (const auto& msg : conv.messages) {
    if (monitor.push(msg) == StreamStatus::kWarned) break;
  }
  return monitor.finish();
}

TestsetEvaluation evaluate_testset(const model::LogisticModel& m,
                                   const embed::Embedder& embedder,
                                   const std::vector<corpus::Conversation>& convs,
                                   const EspdConfig& cfg) {
  TestsetEvaluation eval;
  eval.verdicts.resize(convs.size());
  util::parallel_for(convs.size(), [&](std::size_t i) {
    eval.verdicts[i] = classify_stream(m, embedder, convs[i], cfg);
  });
  for (std::size_t i = 0; i < convs.size(); ++i) {
    const bool positive = convs[i].label == 1;
    const bool warned = eval.verdicts[i].warned;
    if (positive && warned) {
      ++eval.counts.tp;
      eval.latencies.push_back(*eval.verdicts[i].warning_latency);
    } else if (positive) {
      ++eval.counts.fn;
    } else if (warned) {
      ++eval.counts.fp;
    } else {
      ++eval.counts.tn;
    }
  }
  return eval;
}

}  // namespace fedspd::espd
