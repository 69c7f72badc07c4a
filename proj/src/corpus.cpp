#include "fedspd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "fedspd/rng.hpp"
#include "json.hpp"

namespace fedspd::corpus {

namespace {

using nlohmann::json;

Conversation conversation_from_json(const json& j, std::size_t line_no) {
  const auto fail = [line_no](const std::string& what) -> ParseError {
    return ParseError("line " + std::to_string(line_no) + ": " + what);
  };
  if (!j.is_object()) throw fail("record is not an object");
  if (!j.contains("id") || !j["id"].is_string()) {
    throw fail("missing string field 'id'");
  }
  if (!j.contains("label") || !j["label"].is_number_integer()) {
    throw fail("missing integer field 'label'");
  }
  const int label = j["label"].get<int>();
  if (label != 0 && label != 1) throw fail("label must be 0 or 1");
  if (!j.contains("messages") || !j["messages"].is_array()) {
    throw fail("missing array field 'messages'");
  }
  Conversation conv;
  conv.id = j["id"].get<std::string>();
  conv.label = label;
  int index = 0;
  for (const auto& m : j["messages"]) {
    if (!m.is_object() || !m.contains("author") || !m["author"].is_string() ||
        !m.contains("text") || !m["text"].is_string()) {
      throw fail("message must carry string fields 'author' and 'text'");
    }
    conv.messages.push_back(
        {m["author"].get<std::string>(), m["text"].get<std::string>(), index});
    ++index;
  }
  if (conv.messages.empty()) throw fail("conversation has no messages");
  return conv;
}

// Hamilton apportionment of n items over the given ratios.
std::vector<int> apportion(int n, const std::vector<double>& ratios) {
  std::vector<int> out(ratios.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  int assigned = 0;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const double quota = ratios[i] * n;
    out[i] = static_cast<int>(std::floor(quota));
    assigned += out[i];
    remainders.push_back({quota - out[i], i});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < n - assigned; ++k) {
    out[remainders[static_cast<std::size_t>(k) % remainders.size()].second]++;
  }
  return out;
}

int sample_length(rng::Rng& r, double mean, double spread) {
  const int n = static_cast<int>(std::lround(mean + spread * r.normal()));
  return std::max(2, n);
}

std::string neutral_token(rng::Rng& r) {
  return "w" + std::to_string(r.below(5000));
}

std::string marked_token(rng::Rng& r) {
  return "g" + std::to_string(r.below(5000));
}

// signal = probability that a token carries the class marker.
std::string make_text(rng::Rng& r, double signal) {
  const int n_tokens = 3 + static_cast<int>(r.below(6));
  std::string text;
  for (int t = 0; t < n_tokens; ++t) {
    if (t > 0) text += ' ';
    text += (r.uniform() < signal) ? marked_token(r) : neutral_token(r);
  }
  return text;
}

}  // namespace

std::vector<Conversation> parse_conversations(std::istream& stream) {
  std::vector<Conversation> out;
  std::unordered_set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    Conversation conv = conversation_from_json(j, line_no);
    if (!seen_ids.insert(conv.id).second) {
      throw ParseError("line " + std::to_string(line_no) +
                       ": duplicate conversation id '" + conv.id + "'");
    }
    out.push_back(std::move(conv));
  }
  return out;
}

std::vector<Conversation> parse_conversations_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file: " + path);
  return parse_conversations(in);
}

std::string to_jsonl(const std::vector<Conversation>& convs) {
  std::string out;
  for (const auto& conv : convs) {
    json messages = json::array();
    for (const auto& m : conv.messages) {
      messages.push_back({{"author", m.author_id}, {"text", m.text}});
    }
    const json j = {
        {"id", conv.id}, {"label", conv.label}, {"messages", messages}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<Segment> segment(const Conversation& conv, int max_len) {
  if (max_len < 1) throw std::invalid_argument("segment: max_len must be >= 1");
  if (conv.messages.empty()) {
    throw std::invalid_argument("segment: conversation has no messages");
  }
  std::vector<Segment> out;
  const std::size_t n = conv.messages.size();
  const std::size_t len = static_cast<std::size_t>(max_len);
  for (std::size_t start = 0, seq = 0; start < n; start += len, ++seq) {
    Segment seg;
    seg.conversation_id = conv.id;
    seg.seq_no = static_cast<int>(seq);
    seg.label = conv.label;
    const std::size_t end = std::min(n, start + len);
    seg.messages.assign(conv.messages.begin() + static_cast<std::ptrdiff_t>(start),
                        conv.messages.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(seg));
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<Conversation>& convs,
                           std::uint64_t seed, double test_ratio) {
  if (test_ratio < 0.0 || test_ratio >= 1.0) {
    throw std::invalid_argument("split_dataset: test_ratio must be in [0, 1)");
  }
  std::vector<std::size_t> by_label[2];
  for (std::size_t i = 0; i < convs.size(); ++i) {
    by_label[convs[i].label == 1 ? 1 : 0].push_back(i);
  }
  for (int lab = 0; lab < 2; ++lab) {
    if (by_label[lab].size() < 10) {
      throw std::invalid_argument(
          "split_dataset: need at least 10 conversations per class, got " +
          std::to_string(by_label[lab].size()) + " with label " +
          std::to_string(lab));
    }
  }

  rng::Rng r(rng::derive_seed(seed, rng::kTagSplit));
  DatasetSplit split;
  std::vector<Segment> warmup_by_label[2];
  for (int lab = 0; lab < 2; ++lab) {
    auto& ids = by_label[lab];
    r.shuffle(ids);
    std::size_t cursor = 0;
    if (test_ratio > 0.0) {
      const auto n_test = static_cast<std::size_t>(
          std::lround(test_ratio * static_cast<double>(ids.size())));
      for (std::size_t k = 0; k < n_test; ++k) {
        split.test.push_back(convs[ids[cursor++]]);
      }
    }
    const int remaining = static_cast<int>(ids.size() - cursor);
    const auto parts = apportion(remaining, {0.10, 0.81, 0.09});
    if (parts[0] < 1 || parts[1] < 1 || parts[2] < 1) {
      throw std::invalid_argument(
          "split_dataset: not enough conversations to populate every part");
    }
    for (int k = 0; k < parts[0]; ++k) {
      for (auto& seg : segment(convs[ids[cursor]])) {
        warmup_by_label[lab].push_back(std::move(seg));
      }
      ++cursor;
    }
    for (int k = 0; k < parts[1]; ++k) split.train.push_back(convs[ids[cursor++]]);
    for (int k = 0; k < parts[2]; ++k) {
      split.validation.push_back(convs[ids[cursor++]]);
    }
  }

  // Balance the warm-up pool by downsampling the majority label.
  const std::size_t keep =
      std::min(warmup_by_label[0].size(), warmup_by_label[1].size());
  for (int lab = 0; lab < 2; ++lab) {
    auto& segs = warmup_by_label[lab];
    if (segs.size() > keep) {
      std::vector<std::size_t> pick(segs.size());
      for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = i;
      r.shuffle(pick);
      pick.resize(keep);
      std::sort(pick.begin(), pick.end());
      std::vector<Segment> kept;
      kept.reserve(keep);
      for (const auto i : pick) kept.push_back(std::move(segs[i]));
      segs = std::move(kept);
    }
    for (auto& seg : segs) split.warmup.push_back(std::move(seg));
  }
  return split;
}

std::vector<Conversation> generate_synthetic_corpus(
    const SyntheticCorpusConfig& cfg) {
  if (cfg.n_positive < 1 || cfg.n_negative < 1) {
    throw std::invalid_argument(
        "generate_synthetic_corpus: class counts must be >= 1");
  }
  rng::Rng r(rng::derive_seed(cfg.seed, rng::kTagCorpus));
  std::vector<Conversation> out;
  out.reserve(static_cast<std::size_t>(cfg.n_positive + cfg.n_negative));

  for (int i = 0; i < cfg.n_positive; ++i) {
    Conversation conv;
    conv.id = "pos-" + std::to_string(i);
    conv.label = 1;
    const int n =
        sample_length(r, cfg.positive_mean_messages, cfg.positive_spread);
    const int onset = static_cast<int>(
        r.below(static_cast<std::uint64_t>(
                    std::max(1.0, cfg.onset_max_fraction * n)) +
                1));
    for (int m = 0; m < n; ++m) {
      const double signal = (m < onset) ? 0.0 : 0.8 + 0.2 * r.uniform();
      conv.messages.push_back({m % 2 == 0 ? "a" : "b", make_text(r, signal), m});
    }
    out.push_back(std::move(conv));
  }
  for (int i = 0; i < cfg.n_negative; ++i) {
    Conversation conv;
    conv.id = "neg-" + std::to_string(i);
    conv.label = 0;
    const int n =
        sample_length(r, cfg.negative_mean_messages, cfg.negative_spread);
    const bool hard = r.uniform() < cfg.hard_negative_fraction;
    const double signal =
        hard ? cfg.hard_negative_signal_lo +
                   (cfg.hard_negative_signal_hi - cfg.hard_negative_signal_lo) *
                       r.uniform()
             : 0.0;
    for (int m = 0; m < n; ++m) {
      conv.messages.push_back({m % 2 == 0 ? "a" : "b", make_text(r, signal), m});
    }
    out.push_back(std::move(conv));
  }
  return out;
}

std::vector<Segment> oversample_prefixes(const std::vector<Conversation>& convs,
                                         int step, int max_len) {
  if (step < 1) {
    throw std::invalid_argument("oversample_prefixes: step must be >= 1");
  }
  std::vector<Segment> out;
  for (const auto& conv : convs) {
    if (conv.label != 1) continue;
    const int n = static_cast<int>(conv.messages.size());
    for (int len = std::min(step, n);; len = std::min(len + step, n)) {
      Conversation prefix;
      prefix.id = conv.id;
      prefix.label = conv.label;
      prefix.messages.assign(conv.messages.begin(), conv.messages.begin() + len);
      for (auto& seg : segment(prefix, max_len)) out.push_back(std::move(seg));
      if (len == n) break;
    }
  }
  return out;
}

int median_messages(const std::vector<Conversation>& convs) {
  if (convs.empty()) {
    throw std::invalid_argument("median_messages: empty conversation list");
  }
  std::vector<std::size_t> counts;
  counts.reserve(convs.size());
  for (const auto& conv : convs) counts.push_back(conv.messages.size());
  std::sort(counts.begin(), counts.end());
  // Lower median for even cardinality.
  return static_cast<int>(counts[(counts.size() - 1) / 2]);
}

double signal_fraction(const std::string& text) {
  std::istringstream ss(text);
  std::string tok;
  int recognized = 0;
  int marked = 0;
  while (ss >> tok) {
    if (tok.size() < 2) continue;
    const bool digits = std::all_of(tok.begin() + 1, tok.end(),
                                    [](char c) { return c >= '0' && c <= '9'; });
    if (!digits) continue;
    if (tok[0] == 'g') {
      ++recognized;
      ++marked;
    } else if (tok[0] == 'w') {
      ++recognized;
    }
  }
  if (recognized == 0) return -1.0;
  return static_cast<double>(marked) / recognized;
}

}  // namespace fedspd::corpus
