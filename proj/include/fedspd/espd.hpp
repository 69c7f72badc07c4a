#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedspd/corpus.hpp"
#include "fedspd/embed.hpp"
#include "fedspd/metrics.hpp"
#include "fedspd/model.hpp"

namespace fedspd::espd {

struct EspdConfig {
  int window_len = 50;
  int history_len = 10;
  int skepticism = 5;
  double proba_threshold = 0.5;
};

void validate(const EspdConfig& cfg);

struct StepRecord {
  double probability = 0.0;
  int label = 0;
};

struct ConversationVerdict {
  bool warned = false;
  // 1-based count of messages exchanged up to and including the last message
  // of the triggering window; present iff warned.
  std::optional<int> warning_latency;
  std::vector<StepRecord> window_trace;
};

enum class StreamStatus { kUndecided, kWarned };

// Unit-stride slices of length window_len; a shorter conversation yields one
// window holding all of its messages.
std::vector<std::span<const corpus::Message>> windows(
    const corpus::Conversation& conv, int window_len);

// The warning rule on a stream of window probabilities: warn at the first
// step where at least `skepticism` of the last min(history_len, steps so far)
// labels are positive. Returns the 0-based step, if any.
std::optional<std::size_t> first_warning_step(
    std::span<const double> probabilities, const EspdConfig& cfg);

// Messages exchanged up to the end of the window scored at `step`.
int latency_at_step(std::size_t step, std::size_t n_messages, int window_len);

// Incremental per-message monitor. While the stream is open the status is
// warned or undecided, never negative; only finish() can close the stream.
class StreamMonitor {
 public:
  StreamMonitor(const model::LogisticModel& m, const embed::Embedder& embedder,
                EspdConfig cfg, std::string conversation_id);

  StreamStatus push(const corpus::Message& msg);
  StreamStatus status() const { return status_; }
  const std::vector<StepRecord>& trace() const { return trace_; }

  // Declares the stream complete; scores a single full-content window when
  // the conversation never filled one.
  ConversationVerdict finish();

 private:
  void score_window(std::span<const corpus::Message> window);

  const model::LogisticModel& model_;
  const embed::Embedder& embedder_;
  EspdConfig cfg_;
  std::string conversation_id_;
  std::vector<corpus::Message> seen_;
  std::vector<int> recent_labels_;  // ring of the last history_len labels
  int positives_in_history_ = 0;
  std::vector<StepRecord> trace_;
  StreamStatus status_ = StreamStatus::kUndecided;
  std::optional<int> warning_latency_;
};

ConversationVerdict classify_stream(const model::LogisticModel& m,
                                    const embed::Embedder& embedder,
                                    const corpus::Conversation& conv,
                                    const EspdConfig& cfg);

struct TestsetEvaluation {
  std::vector<ConversationVerdict> verdicts;
  metrics::ConfusionCounts counts;
  std::vector<int> latencies;  // latencies of true-positive warnings
};

// Conversation-level confusion: predicted positive iff warned.
TestsetEvaluation evaluate_testset(const model::LogisticModel& m,
                                   const embed::Embedder& embedder,
                                   const std::vector<corpus::Conversation>& convs,
                                   const EspdConfig& cfg);

}  // namespace fedspd::espd
