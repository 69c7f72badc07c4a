#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedspd/corpus.hpp"

namespace fedspd::embed {

using EmbeddingVector = std::vector<double>;

enum class EmbedderKind { kSynthetic, kHashing, kPrecomputed };

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::kSynthetic;
  int dimension = 768;
  // synthetic: class centers sit separation apart along a seeded direction,
  // with isotropic Gaussian noise of noise_scale around them.
  double separation = 4.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;
  // precomputed
  std::string path;
};

EmbedderSpec synthetic_spec(int dimension, double separation,
                            double noise_scale, std::uint64_t seed);
EmbedderSpec hashing_spec(int dimension, std::uint64_t seed);
EmbedderSpec precomputed_spec(const std::string& path);

// CSV with header "key,dim"; one vector per row as key,v1,...,v_dim.
std::map<std::string, EmbeddingVector> load_precomputed(const std::string& path);

// Lookup key for a contiguous message range of a conversation.
std::string precomputed_key(std::string_view conversation_id, int first_index,
                            int last_index);

class Embedder {
 public:
  explicit Embedder(EmbedderSpec spec);

  // Deterministic in (spec, input): synthetic noise is re-derived from a
  // content hash, never drawn from call-time state.
  //
  // synthetic   needs the class either as hidden_label or recoverable from
  //             generator-marked text; errors when neither is available.
  // hashing     token-hash bag of words, L2-normalized.
  // precomputed lookup by (conversation_id, message index range).
  EmbeddingVector embed(std::span<const corpus::Message> messages,
                        std::optional<int> hidden_label = std::nullopt,
                        std::string_view conversation_id = {}) const;

  EmbeddingVector embed_segment(const corpus::Segment& seg) const;

  int dimension() const { return spec_.dimension; }
  const EmbedderSpec& spec() const { return spec_; }

  // Class centers of the synthetic embedder (label 0 and 1).
  const EmbeddingVector& center(int label) const;

 private:
  EmbedderSpec spec_;
  EmbeddingVector center0_;
  EmbeddingVector center1_;
  std::map<std::string, EmbeddingVector> precomputed_;
};

}  // namespace fedspd::embed
