#include "fedspd/corpus.hpp"

#include <set>
#include <sstream>

#include "doctest.h"
#include "fedspd/rng.hpp"

using namespace fedspd;

namespace {

corpus::Conversation make_conv(const std::string& id, int n_messages,
                               int label) {
  corpus::Conversation conv;
  conv.id = id;
  conv.label = label;
  for (int i = 0; i < n_messages; ++i) {
    conv.messages.push_back({i % 2 == 0 ? "a" : "b", "w1 w2", i});
  }
  return conv;
}

}  // namespace

TEST_CASE("parse_conversations round-trips a record") {
  std::istringstream in(
      R"({"id":"c1","label":1,"messages":[{"author":"a","text":"hi"},)"
      R"({"author":"b","text":"hey"},{"author":"a","text":"asl?"}]})"
      "\n");
  const auto convs = corpus::parse_conversations(in);
  REQUIRE(convs.size() == 1);
  CHECK(convs[0].id == "c1");
  CHECK(convs[0].label == 1);
  REQUIRE(convs[0].messages.size() == 3);
  CHECK(convs[0].messages[0].index == 0);
  CHECK(convs[0].messages[2].index == 2);
  CHECK(convs[0].messages[2].text == "asl?");
}

TEST_CASE("parse_conversations rejects bad input with the line number") {
  SUBCASE("empty message list") {
    std::istringstream in(R"({"id":"c1","label":0,"messages":[]})" "\n");
    CHECK_THROWS_AS(corpus::parse_conversations(in), corpus::ParseError);
  }
  SUBCASE("duplicate id") {
    std::istringstream in(
        R"({"id":"c1","label":0,"messages":[{"author":"a","text":"x"}]})"
        "\n"
        R"({"id":"c1","label":0,"messages":[{"author":"a","text":"y"}]})"
        "\n");
    CHECK_THROWS_WITH_AS(corpus::parse_conversations(in),
                         doctest::Contains("duplicate"), corpus::ParseError);
  }
  SUBCASE("malformed json names the line") {
    std::istringstream in(
        R"({"id":"c1","label":0,"messages":[{"author":"a","text":"x"}]})"
        "\nnot json\n");
    CHECK_THROWS_WITH_AS(corpus::parse_conversations(in),
                         doctest::Contains("line 2"), corpus::ParseError);
  }
  SUBCASE("label out of range") {
    std::istringstream in(
        R"({"id":"c1","label":2,"messages":[{"author":"a","text":"x"}]})" "\n");
    CHECK_THROWS_AS(corpus::parse_conversations(in), corpus::ParseError);
  }
}

TEST_CASE("jsonl round trip preserves conversations") {
  std::vector<corpus::Conversation> convs = {make_conv("a", 3, 1),
                                             make_conv("b", 7, 0)};
  std::istringstream in(corpus::to_jsonl(convs));
  const auto parsed = corpus::parse_conversations(in);
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].messages.size() == 3);
  CHECK(parsed[1].messages.size() == 7);
  CHECK(parsed[1].messages[6].index == 6);
}

TEST_CASE("segment chunks greedily") {
  SUBCASE("exactly max_len is one segment") {
    const auto segs = corpus::segment(make_conv("c", 150, 1));
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].messages.size() == 150);
    CHECK(segs[0].seq_no == 0);
    CHECK(segs[0].label == 1);
  }
  SUBCASE("one over max_len splits 150 + 1") {
    const auto segs = corpus::segment(make_conv("c", 151, 0));
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].messages.size() == 150);
    CHECK(segs[1].messages.size() == 1);
    CHECK(segs[1].seq_no == 1);
  }
  SUBCASE("short conversation is kept whole") {
    const auto segs = corpus::segment(make_conv("c", 40, 1));
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].messages.size() == 40);
  }
  SUBCASE("concatenating segments reproduces the conversation") {
    rng::Rng r(7);
    for (int trial = 0; trial < 25; ++trial) {
      const int n = 1 + static_cast<int>(r.below(700));
      const auto conv = make_conv("c", n, 1);
      const auto segs = corpus::segment(conv);
      std::size_t pos = 0;
      for (const auto& seg : segs) {
        for (const auto& msg : seg.messages) {
          REQUIRE(msg.index == conv.messages[pos].index);
          ++pos;
        }
      }
      CHECK(pos == conv.messages.size());
    }
  }
}

TEST_CASE("split_dataset partitions 100 conversations as 10/81/9") {
  std::vector<corpus::Conversation> convs;
  for (int i = 0; i < 10; ++i) {
    convs.push_back(make_conv("p" + std::to_string(i), 200, 1));
  }
  for (int i = 0; i < 90; ++i) {
    convs.push_back(make_conv("n" + std::to_string(i), 30, 0));
  }
  const auto split = corpus::split_dataset(convs, 42);
  CHECK(split.train.size() == 81);
  CHECK(split.validation.size() == 9);
  CHECK(split.warmup_conversation_ids.size() == 10);

  // Pairwise disjoint, union equals the input.
  std::set<std::string> seen;
  for (const auto& id : split.warmup_conversation_ids) {
    CHECK(seen.insert(id).second);
  }
  for (const auto& c : split.train) CHECK(seen.insert(c.id).second);
  for (const auto& c : split.validation) CHECK(seen.insert(c.id).second);
  CHECK(seen.size() == convs.size());

  // Warm-up pool is balanced after downsampling.
  long long pos = 0;
  long long neg = 0;
  for (const auto& seg : split.warmup) (seg.label == 1 ? pos : neg)++;
  CHECK(pos == neg);
  CHECK(pos > 0);
}

TEST_CASE("split_dataset is deterministic and validates input") {
  std::vector<corpus::Conversation> convs;
  for (int i = 0; i < 12; ++i) {
    convs.push_back(make_conv("p" + std::to_string(i), 160, 1));
  }
  for (int i = 0; i < 25; ++i) {
    convs.push_back(make_conv("n" + std::to_string(i), 20, 0));
  }
  const auto a = corpus::split_dataset(convs, 9);
  const auto b = corpus::split_dataset(convs, 9);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train[i].id == b.train[i].id);
  }
  REQUIRE(a.warmup.size() == b.warmup.size());
  for (std::size_t i = 0; i < a.warmup.size(); ++i) {
    CHECK(a.warmup[i].conversation_id == b.warmup[i].conversation_id);
    CHECK(a.warmup[i].seq_no == b.warmup[i].seq_no);
  }

  SUBCASE("too few conversations") {
    std::vector<corpus::Conversation> three = {make_conv("a", 5, 1),
                                               make_conv("b", 5, 0),
                                               make_conv("c", 5, 0)};
    CHECK_THROWS_AS(corpus::split_dataset(three, 1), std::invalid_argument);
  }
}

TEST_CASE("split_dataset can carve a test part first") {
  std::vector<corpus::Conversation> convs;
  for (int i = 0; i < 20; ++i) {
    convs.push_back(make_conv("p" + std::to_string(i), 160, 1));
  }
  for (int i = 0; i < 80; ++i) {
    convs.push_back(make_conv("n" + std::to_string(i), 20, 0));
  }
  const auto split = corpus::split_dataset(convs, 3, 0.4);
  CHECK(split.test.size() == 40);  // 8 positives + 32 negatives
  CHECK(split.train.size() + split.validation.size() +
            split.warmup_conversation_ids.size() ==
        60);
}

TEST_CASE("generate_synthetic_corpus honors counts and determinism") {
  corpus::SyntheticCorpusConfig cfg;
  cfg.n_positive = 10;
  cfg.n_negative = 90;
  cfg.seed = 1;
  const auto corpus1 = corpus::generate_synthetic_corpus(cfg);
  REQUIRE(corpus1.size() == 100);
  long long positives = 0;
  for (const auto& conv : corpus1) {
    if (conv.label == 1) ++positives;
    CHECK(!conv.messages.empty());
  }
  CHECK(positives == 10);

  const auto corpus2 = corpus::generate_synthetic_corpus(cfg);
  CHECK(corpus::to_jsonl(corpus1) == corpus::to_jsonl(corpus2));
}

TEST_CASE("synthetic positives carry a class signal and negatives mostly none") {
  corpus::SyntheticCorpusConfig cfg;
  cfg.n_positive = 20;
  cfg.n_negative = 20;
  cfg.hard_negative_fraction = 0.0;
  cfg.seed = 11;
  for (const auto& conv : corpus::generate_synthetic_corpus(cfg)) {
    double total = 0.0;
    int counted = 0;
    for (const auto& msg : conv.messages) {
      const double f = corpus::signal_fraction(msg.text);
      if (f >= 0.0) {
        total += f;
        ++counted;
      }
    }
    REQUIRE(counted > 0);
    const double mean = total / counted;
    if (conv.label == 1) {
      CHECK(mean > 0.3);  // onset within the first 30% of messages
    } else {
      CHECK(mean == 0.0);
    }
  }
}

TEST_CASE("oversample_prefixes emits prefix segments for positives only") {
  SUBCASE("100 messages at step 50 gives two segments") {
    const auto segs =
        corpus::oversample_prefixes({make_conv("p", 100, 1)}, 50);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].messages.size() == 50);
    CHECK(segs[1].messages.size() == 100);
  }
  SUBCASE("no positives means empty output") {
    CHECK(corpus::oversample_prefixes({make_conv("n", 100, 0)}, 50).empty());
  }
  SUBCASE("step beyond the length gives the full conversation once") {
    const auto segs =
        corpus::oversample_prefixes({make_conv("p", 30, 1)}, 50);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].messages.size() == 30);
  }
  SUBCASE("long prefixes are themselves segmented") {
    const auto segs =
        corpus::oversample_prefixes({make_conv("p", 200, 1)}, 100);
    // prefixes of 100 and 200; the latter splits into 150 + 50
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].messages.size() == 100);
    CHECK(segs[1].messages.size() == 150);
    CHECK(segs[2].messages.size() == 50);
  }
}

TEST_CASE("median_messages uses the lower median") {
  CHECK(corpus::median_messages({make_conv("a", 10, 0), make_conv("b", 20, 0),
                                 make_conv("c", 30, 0)}) == 20);
  CHECK(corpus::median_messages({make_conv("a", 10, 0),
                                 make_conv("b", 20, 0)}) == 10);
  CHECK(corpus::median_messages({make_conv("a", 7, 0)}) == 7);
  CHECK_THROWS_AS(corpus::median_messages({}), std::invalid_argument);
}
