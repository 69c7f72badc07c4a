#include "fedspd/embed.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "fedspd/rng.hpp"
#include "fedspd/util.hpp"

namespace fedspd::embed {

namespace {

void validate(const EmbedderSpec& spec) {
  if (spec.dimension < 2) {
    throw std::invalid_argument("embedder: dimension must be >= 2");
  }
  if (spec.kind == EmbedderKind::kSynthetic &&
      (spec.separation < 0.0 || spec.noise_scale < 0.0)) {
    throw std::invalid_argument(
        "embedder: separation and noise_scale must be non-negative");
  }
}

std::uint64_t content_hash(std::span<const corpus::Message> messages) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& m : messages) {
    h = util::fnv1a64(m.author_id, h);
    h = util::fnv1a64("\x1f", h);
    h = util::fnv1a64(m.text, h);
    h = util::fnv1a64("\x1e", h);
    const auto idx = std::to_string(m.index);
    h = util::fnv1a64(idx, h);
    h = util::fnv1a64("\x1d", h);
  }
  return h;
}

}  // namespace

EmbedderSpec synthetic_spec(int dimension, double separation,
                            double noise_scale, std::uint64_t seed) {
  EmbedderSpec spec;
  spec.kind = EmbedderKind::kSynthetic;
  spec.dimension = dimension;
  spec.separation = separation;
  spec.noise_scale = noise_scale;
  spec.seed = seed;
  return spec;
}

EmbedderSpec hashing_spec(int dimension, std::uint64_t seed) {
  EmbedderSpec spec;
  spec.kind = EmbedderKind::kHashing;
  spec.dimension = dimension;
  spec.seed = seed;
  return spec;
}

EmbedderSpec precomputed_spec(const std::string& path) {
  EmbedderSpec spec;
  spec.kind = EmbedderKind::kPrecomputed;
  spec.path = path;
  return spec;
}

std::map<std::string, EmbeddingVector> load_precomputed(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file: " + path);
  std::string header;
  if (!std::getline(in, header)) {
    throw std::runtime_error("embedding file is empty: " + path);
  }
  // Header: key,dim
  const auto comma = header.find(',');
  if (comma == std::string::npos || header.substr(0, comma) != "key") {
    throw std::runtime_error("embedding file header must be 'key,<dim>'");
  }
  char* end = nullptr;
  const long dim = std::strtol(header.c_str() + comma + 1, &end, 10);
  if (dim < 2) throw std::runtime_error("embedding file declares dim < 2");

  std::map<std::string, EmbeddingVector> out;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    std::string key;
    if (!std::getline(ss, key, ',')) {
      throw std::runtime_error("embedding file line " +
                               std::to_string(line_no) + ": missing key");
    }
    EmbeddingVector v;
    v.reserve(static_cast<std::size_t>(dim));
    std::string field;
    while (std::getline(ss, field, ',')) {
      const double x = std::strtod(field.c_str(), &end);
      if (end == field.c_str()) {
        throw std::runtime_error("embedding file line " +
                                 std::to_string(line_no) +
                                 ": non-numeric value '" + field + "'");
      }
      if (!std::isfinite(x)) {
        throw std::runtime_error("embedding file line " +
                                 std::to_string(line_no) +
                                 ": non-finite value");
      }
      v.push_back(x);
    }
    if (v.size() != static_cast<std::size_t>(dim)) {
      throw std::runtime_error(
          "embedding file line " + std::to_string(line_no) + ": expected " +
          std::to_string(dim) + " values, got " + std::to_string(v.size()));
    }
    out[key] = std::move(v);
  }
  return out;
}

std::string precomputed_key(std::string_view conversation_id, int first_index,
                            int last_index) {
  std::string key(conversation_id);
  key += ':';
  key += std::to_string(first_index);
  key += '-';
  key += std::to_string(last_index);
  return key;
}

Embedder::Embedder(EmbedderSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  if (spec_.kind == EmbedderKind::kSynthetic) {
    // Centers at +/- separation/2 along a seeded random direction.
    rng::Rng r(rng::derive_seed(spec_.seed, rng::kTagEmbedCenters));
    EmbeddingVector direction(static_cast<std::size_t>(spec_.dimension));
    double norm_sq = 0.0;
    for (auto& x : direction) {
      x = r.normal();
      norm_sq += x * x;
    }
    const double norm = std::sqrt(norm_sq);
    center0_.resize(direction.size());
    center1_.resize(direction.size());
    for (std::size_t i = 0; i < direction.size(); ++i) {
      const double u = direction[i] / norm;
      center0_[i] = -0.5 * spec_.separation * u;
      center1_[i] = 0.5 * spec_.separation * u;
    }
  } else if (spec_.kind == EmbedderKind::kPrecomputed) {
    precomputed_ = load_precomputed(spec_.path);
    if (!precomputed_.empty()) {
      spec_.dimension = static_cast<int>(precomputed_.begin()->second.size());
    }
  }
}

const EmbeddingVector& Embedder::center(int label) const {
  if (spec_.kind != EmbedderKind::kSynthetic) {
    throw std::logic_error("center(): only the synthetic embedder has centers");
  }
  return label == 1 ? center1_ : center0_;
}

EmbeddingVector Embedder::embed(std::span<const corpus::Message> messages,
                                std::optional<int> hidden_label,
                                std::string_view conversation_id) const {
  if (messages.empty()) {
    throw std::invalid_argument("embed: empty message list");
  }
  const auto dim = static_cast<std::size_t>(spec_.dimension);

  switch (spec_.kind) {
    case EmbedderKind::kSynthetic: {
      double phi;
      if (hidden_label.has_value()) {
        if (*hidden_label != 0 && *hidden_label != 1) {
          throw std::invalid_argument("embed: hidden_label must be 0 or 1");
        }
        phi = static_cast<double>(*hidden_label);
      } else {
        // Recover the class signal planted by the synthetic corpus generator.
        double total = 0.0;
        int known = 0;
        for (const auto& m : messages) {
          const double f = corpus::signal_fraction(m.text);
          if (f >= 0.0) {
            total += f;
            ++known;
          }
        }
        if (known == 0) {
          throw std::invalid_argument(
              "embed: synthetic embedder needs hidden_label or "
              "generator-marked text");
        }
        phi = total / known;
      }
      rng::Rng noise(rng::derive_seed(spec_.seed, rng::kTagEmbedNoise,
                                      content_hash(messages)));
      EmbeddingVector v(dim);
      for (std::size_t i = 0; i < dim; ++i) {
        const double center = center0_[i] + phi * (center1_[i] - center0_[i]);
        v[i] = center + spec_.noise_scale * noise.normal();
      }
      return v;
    }

    case EmbedderKind::kHashing: {
      EmbeddingVector v(dim, 0.0);
      for (const auto& m : messages) {
        std::istringstream ss(m.text);
        std::string tok;
        while (ss >> tok) {
          const std::uint64_t h =
              rng::mix(util::fnv1a64(tok), spec_.seed);
          const std::size_t bucket = h % dim;
          const double sign = ((h >> 63) & 1) ? -1.0 : 1.0;
          v[bucket] += sign;
        }
      }
      double norm_sq = 0.0;
      for (const double x : v) norm_sq += x * x;
      if (norm_sq > 0.0) {
        const double inv = 1.0 / std::sqrt(norm_sq);
        for (auto& x : v) x *= inv;
      }
      return v;
    }

    case EmbedderKind::kPrecomputed: {
      if (conversation_id.empty()) {
        throw std::invalid_argument(
            "embed: precomputed lookup needs a conversation id");
      }
      const auto key = precomputed_key(conversation_id, messages.front().index,
                                       messages.back().index);
      const auto it = precomputed_.find(key);
      if (it == precomputed_.end()) {
        throw std::runtime_error("embed: no precomputed vector for key '" +
                                 key + "'");
      }
      return it->second;
    }
  }
  throw std::logic_error("embed: unknown embedder kind");
}

EmbeddingVector Embedder::embed_segment(const corpus::Segment& seg) const {
  return embed(seg.messages, seg.label, seg.conversation_id);
}

}  // namespace fedspd::embed
