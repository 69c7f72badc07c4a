#pragma once

#include <cstdint>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedspd::corpus {

struct Message {
  std::string author_id;
  std::string text;
  int index = 0;  // 0-based position within the conversation
};

struct Conversation {
  std::string id;
  std::vector<Message> messages;
  int label = 0;  // 1 = grooming, 0 = non-grooming
};

struct Segment {
  std::string conversation_id;
  int seq_no = 0;
  std::vector<Message> messages;  // length in [1, max_len]
  int label = 0;
};

struct DatasetSplit {
  std::vector<Segment> warmup;  // segmented and label-balanced
  std::vector<std::string> warmup_conversation_ids;
  std::vector<Conversation> train;
  std::vector<Conversation> validation;
  std::vector<Conversation> test;
};

struct SyntheticCorpusConfig {
  int n_positive = 90;
  int n_negative = 910;
  double positive_mean_messages = 180.0;
  double positive_spread = 60.0;
  double negative_mean_messages = 36.0;
  double negative_spread = 25.0;
  // Companion separation for the synthetic embedder built from this corpus.
  double embed_separation = 4.0;
  // Positive conversations turn predatory at a uniform point within this
  // leading fraction of the conversation.
  double onset_max_fraction = 0.3;
  // A small share of negative conversations carries a partial class signal;
  // these are the borderline conversations that drive false positives.
  double hard_negative_fraction = 0.03;
  double hard_negative_signal_lo = 0.4;
  double hard_negative_signal_hi = 0.65;
  std::uint64_t seed = 0;
};

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSON record per line: {"id": ..., "label": 0|1,
// "messages": [{"author": ..., "text": ...}, ...]}.
std::vector<Conversation> parse_conversations(std::istream& stream);
std::vector<Conversation> parse_conversations_file(const std::string& path);

std::string to_jsonl(const std::vector<Conversation>& convs);

// Greedy chunking into segments of exactly max_len except possibly the last.
std::vector<Segment> segment(const Conversation& conv, int max_len = 150);

// Stratified ~10/81/9 warm-up/train/validation split; the warm-up part is
// segmented and balanced by downsampling the majority label. When
// test_ratio > 0 a test part is carved out per class first.
DatasetSplit split_dataset(const std::vector<Conversation>& convs,
                           std::uint64_t seed, double test_ratio = 0.0);

std::vector<Conversation> generate_synthetic_corpus(
    const SyntheticCorpusConfig& cfg);

// Prefix oversampling of the positive class: prefixes of length step,
// 2*step, ... (each segmented); negatives are ignored.
std::vector<Segment> oversample_prefixes(const std::vector<Conversation>& convs,
                                         int step, int max_len = 150);

// Lower median of per-conversation message counts.
int median_messages(const std::vector<Conversation>& convs);

// Fraction of generator-marked tokens in a message text; the hidden class
// signal consumed by the synthetic embedder. Returns -1 when no recognizable
// tokens are present.
double signal_fraction(const std::string& text);

}  // namespace fedspd::corpus
