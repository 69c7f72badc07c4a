#include "fedspd/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "fedspd/rng.hpp"
#include "fedspd/util.hpp"
#include "json.hpp"

namespace fedspd::cli {

namespace {

using nlohmann::json;

constexpr std::uint64_t kSeedCorpus = 101;
constexpr std::uint64_t kSeedTestCorpus = 102;
constexpr std::uint64_t kSeedEmbedder = 103;
constexpr std::uint64_t kSeedFederated = 104;
constexpr std::uint64_t kSeedAttack = 105;
constexpr std::uint64_t kSeedSplit = 106;

void check_keys(const json& j, const std::string& where,
                const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw ValidationError("spec: unknown field '" + key + "' in " + where);
    }
  }
}

double get_num(const json& j, const std::string& where, const std::string& key,
               double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) {
    throw ValidationError("spec: field '" + key + "' in " + where +
                          " must be a number");
  }
  return j[key].get<double>();
}

int get_int(const json& j, const std::string& where, const std::string& key,
            int fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) {
    throw ValidationError("spec: field '" + key + "' in " + where +
                          " must be an integer");
  }
  return j[key].get<int>();
}

std::string get_str(const json& j, const std::string& where,
                    const std::string& key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string()) {
    throw ValidationError("spec: field '" + key + "' in " + where +
                          " must be a string");
  }
  return j[key].get<std::string>();
}

corpus::SyntheticCorpusConfig parse_synthetic(const json& j,
                                              CorpusSource& source) {
  check_keys(j, "corpus.synthetic",
             {"n_positive", "n_negative", "positive_mean_messages",
              "positive_spread", "negative_mean_messages", "negative_spread",
              "embed_separation", "onset_max_fraction",
              "hard_negative_fraction", "hard_negative_signal_lo",
              "hard_negative_signal_hi", "test_n_positive", "test_n_negative"});
  corpus::SyntheticCorpusConfig cfg;
  cfg.n_positive = get_int(j, "corpus.synthetic", "n_positive", cfg.n_positive);
  cfg.n_negative = get_int(j, "corpus.synthetic", "n_negative", cfg.n_negative);
  cfg.positive_mean_messages = get_num(j, "corpus.synthetic",
                                       "positive_mean_messages",
                                       cfg.positive_mean_messages);
  cfg.positive_spread =
      get_num(j, "corpus.synthetic", "positive_spread", cfg.positive_spread);
  cfg.negative_mean_messages = get_num(j, "corpus.synthetic",
                                       "negative_mean_messages",
                                       cfg.negative_mean_messages);
  cfg.negative_spread =
      get_num(j, "corpus.synthetic", "negative_spread", cfg.negative_spread);
  cfg.embed_separation =
      get_num(j, "corpus.synthetic", "embed_separation", cfg.embed_separation);
  cfg.onset_max_fraction = get_num(j, "corpus.synthetic", "onset_max_fraction",
                                   cfg.onset_max_fraction);
  cfg.hard_negative_fraction = get_num(
      j, "corpus.synthetic", "hard_negative_fraction", cfg.hard_negative_fraction);
  cfg.hard_negative_signal_lo = get_num(j, "corpus.synthetic",
                                        "hard_negative_signal_lo",
                                        cfg.hard_negative_signal_lo);
  cfg.hard_negative_signal_hi = get_num(j, "corpus.synthetic",
                                        "hard_negative_signal_hi",
                                        cfg.hard_negative_signal_hi);
  source.test_n_positive =
      get_int(j, "corpus.synthetic", "test_n_positive", source.test_n_positive);
  source.test_n_negative =
      get_int(j, "corpus.synthetic", "test_n_negative", source.test_n_negative);
  return cfg;
}

}  // namespace

ExperimentSpec parse_spec(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("spec: not valid JSON: ") + e.what());
  }
  check_keys(j, "spec root",
             {"seed", "corpus", "embedder", "federated", "espd", "evaluation",
              "attack"});
  if (!j.contains("seed") || !j["seed"].is_number_integer()) {
    throw ValidationError("spec: mandatory integer field 'seed' is missing");
  }
  ExperimentSpec spec;
  spec.seed = j["seed"].get<std::uint64_t>();

  if (!j.contains("corpus") || !j["corpus"].is_object()) {
    throw ValidationError("spec: mandatory object field 'corpus' is missing");
  }
  const auto& jc = j["corpus"];
  check_keys(jc, "corpus", {"synthetic", "files"});
  if (jc.contains("synthetic") == jc.contains("files")) {
    throw ValidationError(
        "spec: corpus must have exactly one of 'synthetic' or 'files'");
  }
  if (jc.contains("synthetic")) {
    spec.corpus.synthetic = true;
    spec.corpus.synthetic_cfg = parse_synthetic(jc["synthetic"], spec.corpus);
    if (spec.corpus.synthetic_cfg.n_positive < 1 ||
        spec.corpus.synthetic_cfg.n_negative < 1 ||
        spec.corpus.test_n_positive < 1 || spec.corpus.test_n_negative < 1) {
      throw ValidationError("spec: corpus class counts must be >= 1");
    }
  } else {
    spec.corpus.synthetic = false;
    const auto& jf = jc["files"];
    check_keys(jf, "corpus.files", {"conversations", "test"});
    spec.corpus.conversations_path = get_str(jf, "corpus.files", "conversations", "");
    spec.corpus.test_path = get_str(jf, "corpus.files", "test", "");
    if (spec.corpus.conversations_path.empty() || spec.corpus.test_path.empty()) {
      throw ValidationError(
          "spec: corpus.files needs 'conversations' and 'test' paths");
    }
  }

  spec.embedder.separation = spec.corpus.synthetic_cfg.embed_separation;
  if (j.contains("embedder")) {
    const auto& je = j["embedder"];
    check_keys(je, "embedder",
               {"kind", "dimension", "separation", "noise_scale", "path"});
    const auto kind = get_str(je, "embedder", "kind", "synthetic");
    if (kind == "synthetic") {
      spec.embedder.kind = embed::EmbedderKind::kSynthetic;
    } else if (kind == "hashing") {
      spec.embedder.kind = embed::EmbedderKind::kHashing;
    } else if (kind == "precomputed") {
      spec.embedder.kind = embed::EmbedderKind::kPrecomputed;
    } else {
      throw ValidationError("spec: embedder.kind must be synthetic, hashing "
                            "or precomputed, got '" + kind + "'");
    }
    spec.embedder.dimension =
        get_int(je, "embedder", "dimension", spec.embedder.dimension);
    spec.embedder.separation =
        get_num(je, "embedder", "separation", spec.embedder.separation);
    spec.embedder.noise_scale =
        get_num(je, "embedder", "noise_scale", spec.embedder.noise_scale);
    spec.embedder.path = get_str(je, "embedder", "path", "");
    if (spec.embedder.kind == embed::EmbedderKind::kPrecomputed &&
        spec.embedder.path.empty()) {
      throw ValidationError("spec: precomputed embedder needs a 'path'");
    }
    if (spec.embedder.dimension < 2) {
      throw ValidationError("spec: embedder.dimension must be >= 2");
    }
  }

  if (j.contains("federated")) {
    const auto& jf = j["federated"];
    check_keys(jf, "federated",
               {"total_clients", "rounds", "sample_fraction", "local_epochs",
                "lr", "batch_size", "l2", "mode", "metric_dp", "dp_sgd",
                "dp_fedavg", "oversample_step"});
    auto& fc = spec.federated;
    fc.total_clients = get_int(jf, "federated", "total_clients", fc.total_clients);
    fc.rounds = get_int(jf, "federated", "rounds", fc.rounds);
    fc.sample_fraction =
        get_num(jf, "federated", "sample_fraction", fc.sample_fraction);
    fc.local_epochs = get_int(jf, "federated", "local_epochs", fc.local_epochs);
    fc.lr = get_num(jf, "federated", "lr", fc.lr);
    fc.batch_size = get_int(jf, "federated", "batch_size", fc.batch_size);
    fc.l2 = get_num(jf, "federated", "l2", fc.l2);
    fc.oversample_step =
        get_int(jf, "federated", "oversample_step", fc.oversample_step);
    try {
      fc.mode = fed::mode_from_name(get_str(jf, "federated", "mode", "plain"));
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("spec: ") + e.what());
    }
    if (jf.contains("metric_dp")) {
      const auto& jm = jf["metric_dp"];
      check_keys(jm, "federated.metric_dp", {"eta"});
      fc.metric_dp.eta = get_num(jm, "federated.metric_dp", "eta", fc.metric_dp.eta);
    }
    if (jf.contains("dp_sgd")) {
      const auto& js = jf["dp_sgd"];
      check_keys(js, "federated.dp_sgd",
                 {"clip_norm", "noise_multiplier", "delta"});
      fc.dp_sgd.clip_norm =
          get_num(js, "federated.dp_sgd", "clip_norm", fc.dp_sgd.clip_norm);
      fc.dp_sgd.noise_multiplier = get_num(js, "federated.dp_sgd",
                                           "noise_multiplier",
                                           fc.dp_sgd.noise_multiplier);
      fc.dp_sgd.delta = get_num(js, "federated.dp_sgd", "delta", fc.dp_sgd.delta);
    }
    if (jf.contains("dp_fedavg")) {
      const auto& ja = jf["dp_fedavg"];
      check_keys(ja, "federated.dp_fedavg",
                 {"update_clip", "noise_multiplier", "delta", "adaptive",
                  "target_quantile", "clip_lr", "indicator_noise_std"});
      auto& da = fc.dp_fedavg;
      da.update_clip = get_num(ja, "federated.dp_fedavg", "update_clip",
                               da.update_clip);
      da.noise_multiplier = get_num(ja, "federated.dp_fedavg",
                                    "noise_multiplier", da.noise_multiplier);
      da.delta = get_num(ja, "federated.dp_fedavg", "delta", da.delta);
      if (ja.contains("adaptive")) {
        if (!ja["adaptive"].is_boolean()) {
          throw ValidationError("spec: dp_fedavg.adaptive must be a boolean");
        }
        da.adaptive = ja["adaptive"].get<bool>();
      }
      da.target_quantile = get_num(ja, "federated.dp_fedavg",
                                   "target_quantile", da.target_quantile);
      da.clip_lr = get_num(ja, "federated.dp_fedavg", "clip_lr", da.clip_lr);
      da.indicator_noise_std = get_num(ja, "federated.dp_fedavg",
                                       "indicator_noise_std",
                                       da.indicator_noise_std);
    }
    if (fc.sample_fraction <= 0.0 || fc.sample_fraction > 1.0) {
      throw ValidationError("spec: federated.sample_fraction must be in (0, 1]");
    }
    if (fc.total_clients < 1 || fc.rounds < 0 || fc.local_epochs < 0 ||
        fc.batch_size < 1 || fc.lr < 0.0) {
      throw ValidationError("spec: invalid federated training parameters");
    }
  }

  if (j.contains("espd")) {
    const auto& je = j["espd"];
    check_keys(je, "espd",
               {"window_len", "history_len", "skepticism", "proba_threshold"});
    spec.espd.window_len = get_int(je, "espd", "window_len", spec.espd.window_len);
    spec.espd.history_len =
        get_int(je, "espd", "history_len", spec.espd.history_len);
    spec.espd.skepticism = get_int(je, "espd", "skepticism", spec.espd.skepticism);
    spec.espd.proba_threshold =
        get_num(je, "espd", "proba_threshold", spec.espd.proba_threshold);
    try {
      espd::validate(spec.espd);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("spec: ") + e.what());
    }
  }

  if (j.contains("evaluation")) {
    const auto& je = j["evaluation"];
    check_keys(je, "evaluation", {"target_fpr", "p_override", "median_source"});
    spec.evaluation.target_fpr =
        get_num(je, "evaluation", "target_fpr", spec.evaluation.target_fpr);
    if (je.contains("p_override") && !je["p_override"].is_null()) {
      spec.evaluation.p_override = get_num(je, "evaluation", "p_override", 0.0);
    }
    spec.evaluation.median_source = get_str(je, "evaluation", "median_source",
                                            spec.evaluation.median_source);
    if (spec.evaluation.median_source != "positive_train" &&
        spec.evaluation.median_source != "all_train") {
      throw ValidationError(
          "spec: evaluation.median_source must be positive_train or all_train");
    }
  }

  if (j.contains("attack")) {
    const auto& ja = j["attack"];
    check_keys(ja, "attack", {"etas", "n_reference"});
    if (ja.contains("etas")) {
      if (!ja["etas"].is_array()) {
        throw ValidationError("spec: attack.etas must be an array");
      }
      for (const auto& v : ja["etas"]) {
        if (!v.is_number() || v.get<double>() <= 0.0) {
          throw ValidationError("spec: attack.etas must be positive numbers");
        }
        spec.attack.etas.push_back(v.get<double>());
      }
    }
    spec.attack.n_reference =
        get_int(ja, "attack", "n_reference", spec.attack.n_reference);
    if (spec.attack.n_reference < 1) {
      throw ValidationError("spec: attack.n_reference must be >= 1");
    }
  }
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::string text;
  try {
    text = util::read_file(path);
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
  return parse_spec(text);
}

CommandContext make_context(const std::filesystem::path& spec_path,
                            const std::filesystem::path& out_dir, bool force,
                            std::optional<std::uint64_t> seed_override,
                            const std::string& mode_override) {
  CommandContext ctx;
  std::string text;
  try {
    text = util::read_file(spec_path);
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
  ctx.spec = parse_spec(text);
  if (seed_override.has_value()) ctx.spec.seed = *seed_override;
  if (!mode_override.empty()) {
    try {
      ctx.spec.federated.mode = fed::mode_from_name(mode_override);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(e.what());
    }
  }
  ctx.spec_sha256 = util::sha256_hex(text);
  ctx.out_dir = out_dir;
  ctx.force = force;
  return ctx;
}

namespace {

void write_manifest(const CommandContext& ctx, const std::string& command,
                    const std::string& variant,
                    const std::vector<std::filesystem::path>& artifacts) {
  json m;
  m["command"] = command;
  if (!variant.empty()) m["variant"] = variant;
  m["spec_sha256"] = ctx.spec_sha256;
  m["seed"] = ctx.spec.seed;
  m["mode"] = fed::mode_name(ctx.spec.federated.mode);
  json hashes = json::object();
  for (const auto& rel : artifacts) {
    hashes[rel.generic_string()] =
        util::sha256_hex(util::read_file(ctx.out_dir / rel));
  }
  m["artifacts"] = hashes;
  const std::string name =
      "manifest-" + command + (variant.empty() ? "" : "-" + variant) + ".json";
  util::atomic_write_file(ctx.out_dir / name, m.dump(2) + "\n");
}

json split_manifest(const corpus::DatasetSplit& split) {
  json j;
  j["warmup"] = json::array();
  for (const auto& seg : split.warmup) {
    j["warmup"].push_back(
        {{"conversation_id", seg.conversation_id}, {"seq_no", seg.seq_no}});
  }
  const auto ids = [](const std::vector<corpus::Conversation>& convs) {
    json arr = json::array();
    for (const auto& c : convs) arr.push_back(c.id);
    return arr;
  };
  j["train"] = ids(split.train);
  j["validation"] = ids(split.validation);
  return j;
}

std::string optional_field(const std::optional<double>& v) {
  return v.has_value() ? util::format_double(*v) : "undefined";
}

struct LoadedCorpus {
  std::vector<corpus::Conversation> pool;  // warm-up/train/validation source
  std::vector<corpus::Conversation> test;
};

LoadedCorpus corpus_files(const CommandContext& ctx) {
  const auto dir = ctx.out_dir / "corpus";
  const auto conv_path = dir / "conversations.jsonl";
  const auto test_path = dir / "test.jsonl";
  if (!std::filesystem::exists(conv_path) ||
      !std::filesystem::exists(test_path)) {
    throw std::runtime_error(
        "corpus files not found under " + dir.string() +
        "; run the gen-corpus command first");
  }
  LoadedCorpus out;
  out.pool = corpus::parse_conversations_file(conv_path.string());
  out.test = corpus::parse_conversations_file(test_path.string());
  return out;
}

int checkpoint_dimension(const ExperimentSpec& spec) {
  return spec.embedder.dimension;
}

std::string eval_stem(const std::filesystem::path& checkpoint) {
  const auto parent = checkpoint.parent_path().filename().string();
  if (!parent.empty()) return parent;
  return checkpoint.stem().string();
}

}  // namespace

corpus::DatasetSplit load_split(const CommandContext& ctx) {
  auto loaded = corpus_files(ctx);
  const auto manifest_path = ctx.out_dir / "corpus" / "split.json";
  const auto manifest = json::parse(util::read_file(manifest_path));

  std::map<std::string, const corpus::Conversation*> by_id;
  for (const auto& conv : loaded.pool) by_id[conv.id] = &conv;
  const auto lookup = [&](const std::string& id) -> const corpus::Conversation& {
    const auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw std::runtime_error("split manifest references unknown id: " + id);
    }
    return *it->second;
  };

  corpus::DatasetSplit split;
  for (const auto& entry : manifest["warmup"]) {
    const auto& conv = lookup(entry["conversation_id"].get<std::string>());
    const auto segments = corpus::segment(conv);
    const int seq = entry["seq_no"].get<int>();
    if (seq < 0 || static_cast<std::size_t>(seq) >= segments.size()) {
      throw std::runtime_error("split manifest has bad seq_no for " + conv.id);
    }
    split.warmup.push_back(segments[static_cast<std::size_t>(seq)]);
  }
  for (const auto& id : manifest["train"]) {
    split.train.push_back(lookup(id.get<std::string>()));
  }
  for (const auto& id : manifest["validation"]) {
    split.validation.push_back(lookup(id.get<std::string>()));
  }
  split.test = std::move(loaded.test);
  return split;
}

embed::Embedder make_embedder(const ExperimentSpec& spec) {
  embed::EmbedderSpec es = spec.embedder;
  es.seed = rng::derive_seed(spec.seed, kSeedEmbedder);
  return embed::Embedder(es);
}

double penalty_rate(const ExperimentSpec& spec,
                    const corpus::DatasetSplit& split) {
  if (spec.evaluation.p_override.has_value()) {
    return *spec.evaluation.p_override;
  }
  std::vector<corpus::Conversation> source;
  for (const auto& conv : split.train) {
    if (spec.evaluation.median_source == "all_train" || conv.label == 1) {
      source.push_back(conv);
    }
  }
  if (source.empty()) {
    throw std::runtime_error("penalty_rate: no conversations to take the "
                             "median over");
  }
  return metrics::derive_p(corpus::median_messages(source));
}

std::string evaluation_csv(const metrics::EvaluationReport& rep,
                           const metrics::ConfusionCounts& counts,
                           const std::string& model_name,
                           const std::string& mode, double threshold) {
  std::ostringstream out;
  out << "model,mode,threshold,tp,fp,tn,fn,recall,precision,f1,speed,"
         "f_latency,fpr,p,n_warnings,median_latency\n";
  long long median_latency = 0;
  if (!rep.latencies.empty()) {
    auto sorted = rep.latencies;
    std::sort(sorted.begin(), sorted.end());
    median_latency = sorted[(sorted.size() - 1) / 2];
  }
  out << model_name << ',' << mode << ',' << util::format_double(threshold)
      << ',' << counts.tp << ',' << counts.fp << ',' << counts.tn << ','
      << counts.fn << ',' << util::format_double(rep.recall) << ','
      << optional_field(rep.precision) << ',' << util::format_double(rep.f1)
      << ',' << optional_field(rep.speed) << ','
      << util::format_double(rep.f_latency) << ',' << optional_field(rep.fpr)
      << ',' << util::format_double(rep.p) << ',' << rep.latencies.size() << ','
      << median_latency << '\n';
  return out.str();
}

void cmd_gen_corpus(const CommandContext& ctx) {
  const auto dir = ctx.out_dir / "corpus";
  const auto conv_path = dir / "conversations.jsonl";
  if (std::filesystem::exists(conv_path) && !ctx.force) {
    throw ValidationError("gen-corpus: " + conv_path.string() +
                          " exists; pass --force to overwrite");
  }

  std::vector<corpus::Conversation> pool;
  std::vector<corpus::Conversation> test;
  if (ctx.spec.corpus.synthetic) {
    corpus::SyntheticCorpusConfig cfg = ctx.spec.corpus.synthetic_cfg;
    cfg.seed = rng::derive_seed(ctx.spec.seed, kSeedCorpus);
    pool = corpus::generate_synthetic_corpus(cfg);

    corpus::SyntheticCorpusConfig test_cfg = cfg;
    test_cfg.n_positive = ctx.spec.corpus.test_n_positive;
    test_cfg.n_negative = ctx.spec.corpus.test_n_negative;
    test_cfg.seed = rng::derive_seed(ctx.spec.seed, kSeedTestCorpus);
    test = corpus::generate_synthetic_corpus(test_cfg);
    for (auto& conv : test) conv.id = "test-" + conv.id;
  } else {
    pool = corpus::parse_conversations_file(ctx.spec.corpus.conversations_path);
    test = corpus::parse_conversations_file(ctx.spec.corpus.test_path);
  }

  const auto split = corpus::split_dataset(
      pool, rng::derive_seed(ctx.spec.seed, kSeedSplit));

  util::atomic_write_file(conv_path, corpus::to_jsonl(pool));
  util::atomic_write_file(dir / "test.jsonl", corpus::to_jsonl(test));
  util::atomic_write_file(dir / "split.json",
                          split_manifest(split).dump(2) + "\n");
  write_manifest(ctx, "gen-corpus", "",
                 {std::filesystem::path("corpus/conversations.jsonl"),
                  std::filesystem::path("corpus/test.jsonl"),
                  std::filesystem::path("corpus/split.json")});
}

void cmd_train(const CommandContext& ctx, const std::string& baseline) {
  const auto split = load_split(ctx);
  const auto embedder = make_embedder(ctx.spec);
  fed::FederatedConfig cfg = ctx.spec.federated;
  cfg.seed = rng::derive_seed(ctx.spec.seed, kSeedFederated);
  cfg.metric_dp.dimension = embedder.dimension();

  std::string variant;
  model::LogisticModel trained = model::LogisticModel::zeros(
      checkpoint_dimension(ctx.spec));
  json privacy;
  std::string history_text;

  if (baseline.empty()) {
    variant = fed::mode_name(cfg.mode);
    const auto clients =
        fed::build_clients(split.train, split.warmup, embedder, cfg);
    auto result = fed::run_training(clients, cfg, embedder.dimension());
    trained = std::move(result.model);

    for (const auto& record : result.history.rounds) {
      json line;
      line["round"] = record.round;
      line["model_sha256"] = record.model_sha256;
      line["mean_client_loss"] = record.mean_client_loss;
      line["sampled_clients"] = record.sampled_clients;
      json priv = json::object();
      switch (cfg.mode) {
        case fed::Mode::kMetricDp:
          priv["eta"] = cfg.metric_dp.eta;
          priv["raw_embeddings_stored"] = false;
          break;
        case fed::Mode::kDpFedAvg:
          priv["clip_level"] = record.clip_level;
          if (record.epsilon_so_far) {
            priv["epsilon_so_far"] = *record.epsilon_so_far;
            priv["delta"] = cfg.dp_fedavg.delta;
          }
          break;
        case fed::Mode::kDpSgd:
          if (record.epsilon_so_far) {
            priv["epsilon_per_participation"] = *record.epsilon_so_far;
            priv["epsilon_linear_upper"] = *record.epsilon_upper_so_far;
            priv["delta"] = cfg.dp_sgd.delta;
          }
          break;
        case fed::Mode::kPlain:
          break;
      }
      line["privacy"] = priv;
      history_text += line.dump();
      history_text += '\n';
    }

    privacy["mode"] = fed::mode_name(cfg.mode);
    if (cfg.mode == fed::Mode::kMetricDp) {
      privacy["eta"] = cfg.metric_dp.eta;
      privacy["raw_embeddings_stored"] = false;
      privacy["note"] =
          "metric-DP budget is eta * d_chi over the embedding metric; not "
          "comparable to an (epsilon, delta) guarantee";
    } else if (cfg.mode == fed::Mode::kDpFedAvg &&
               cfg.dp_fedavg.noise_multiplier > 0.0) {
      dp::DpFedAvgParams params = cfg.dp_fedavg;
      params.total_clients = cfg.total_clients;
      params.clients_per_round = static_cast<int>(std::ceil(
          cfg.sample_fraction * static_cast<double>(cfg.total_clients)));
      params.rounds = cfg.rounds;
      const auto detail = dp::user_level_budget_detail(params);
      privacy["q"] = static_cast<double>(params.clients_per_round) /
                     static_cast<double>(params.total_clients);
      privacy["z"] = params.noise_multiplier;
      privacy["rounds"] = params.rounds;
      privacy["delta"] = params.delta;
      privacy["epsilon"] = detail.epsilon;
      privacy["best_order"] = detail.best_order;
      privacy["level"] = "user";
    } else if (cfg.mode == fed::Mode::kDpSgd &&
               cfg.dp_sgd.noise_multiplier > 0.0) {
      // Worst case over the client population: largest sampling rate and
      // step count.
      double worst_eps = 0.0;
      double worst_order = 0.0;
      double worst_q = 0.0;
      long long worst_steps = 0;
      std::set<int> sizes;
      for (const auto& c : clients) sizes.insert(static_cast<int>(c.examples.size()));
      for (const int n : sizes) {
        const int batch = std::min(cfg.batch_size, n);
        const double q = static_cast<double>(batch) / n;
        const long long steps =
            static_cast<long long>((n + batch - 1) / batch) * cfg.local_epochs;
        const auto curve = dp::rdp_subsampled_gaussian(
            q, cfg.dp_sgd.noise_multiplier, steps, dp::default_rdp_orders());
        const auto detail = dp::rdp_to_dp_detail(curve, cfg.dp_sgd.delta);
        if (detail.epsilon > worst_eps) {
          worst_eps = detail.epsilon;
          worst_order = detail.best_order;
          worst_q = q;
          worst_steps = steps;
        }
      }
      privacy["q"] = worst_q;
      privacy["z"] = cfg.dp_sgd.noise_multiplier;
      privacy["steps"] = worst_steps;
      privacy["delta"] = cfg.dp_sgd.delta;
      privacy["epsilon"] = worst_eps;
      privacy["best_order"] = worst_order;
      privacy["level"] = "instance";
      privacy["max_participations"] = result.max_participations;
      const auto worst_curve = dp::rdp_subsampled_gaussian(
          worst_q, cfg.dp_sgd.noise_multiplier, worst_steps,
          dp::default_rdp_orders());
      dp::RdpCurve composed = worst_curve;
      for (auto& v : composed.rdp_values) {
        v *= static_cast<double>(result.max_participations);
      }
      privacy["epsilon_linear_upper"] =
          dp::rdp_to_dp(composed, cfg.dp_sgd.delta).epsilon;
      privacy["note"] =
          "per-participation budget; resampled clients compose, see "
          "epsilon_linear_upper";
    } else {
      privacy["note"] = "no formal privacy guarantee in this mode";
    }
  } else if (baseline == "warmup" || baseline == "centralized") {
    variant = "baseline-" + baseline;
    std::vector<model::TrainingExample> data =
        fed::embed_segments(split.warmup, embedder);
    if (baseline == "centralized") {
      for (const auto& conv : split.train) {
        for (const auto& seg : corpus::segment(conv)) {
          data.push_back({embedder.embed_segment(seg), seg.label});
        }
      }
    }
    // Epoch count chosen to match the total local passes of a federated run.
    const int epochs = std::max(cfg.local_epochs, 1) * std::max(cfg.rounds, 1);
    trained = fed::train_centralized(
        model::LogisticModel::zeros(embedder.dimension()), data, epochs,
        cfg.lr, cfg.batch_size, cfg.seed, cfg.l2);
    privacy["mode"] = "none";
    privacy["note"] = "centralized baseline; no privacy mechanism";
  } else {
    throw ValidationError("train: unknown baseline '" + baseline +
                          "' (use warmup or centralized)");
  }

  const auto dir = ctx.out_dir / ("train-" + variant);
  util::atomic_write_file(dir / "checkpoint.txt", model::to_checkpoint(trained));
  std::vector<std::filesystem::path> artifacts = {
      std::filesystem::path("train-" + variant) / "checkpoint.txt"};
  if (baseline.empty()) {
    util::atomic_write_file(dir / "history.jsonl", history_text);
    artifacts.push_back(std::filesystem::path("train-" + variant) /
                        "history.jsonl");
  }
  util::atomic_write_file(dir / "privacy_report.json", privacy.dump(2) + "\n");
  artifacts.push_back(std::filesystem::path("train-" + variant) /
                      "privacy_report.json");
  write_manifest(ctx, "train", variant, artifacts);
}

void cmd_evaluate(const CommandContext& ctx,
                  const std::filesystem::path& checkpoint,
                  std::optional<double> threshold_override) {
  const auto split = load_split(ctx);
  if (split.test.empty()) {
    throw std::runtime_error("evaluate: test set is empty");
  }
  const auto embedder = make_embedder(ctx.spec);
  const auto m = model::from_checkpoint(util::read_file(checkpoint));
  espd::EspdConfig cfg = ctx.spec.espd;
  if (threshold_override.has_value()) cfg.proba_threshold = *threshold_override;

  const double p = penalty_rate(ctx.spec, split);
  const auto eval = espd::evaluate_testset(m, embedder, split.test, cfg);
  const auto rep = metrics::report(eval.counts, eval.latencies, p);

  std::string verdicts;
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    json line;
    line["id"] = split.test[i].id;
    line["label"] = split.test[i].label;
    line["warned"] = eval.verdicts[i].warned;
    if (eval.verdicts[i].warning_latency) {
      line["latency"] = *eval.verdicts[i].warning_latency;
    } else {
      line["latency"] = nullptr;
    }
    line["trace_len"] = eval.verdicts[i].window_trace.size();
    verdicts += line.dump();
    verdicts += '\n';
  }

  const std::string stem = eval_stem(checkpoint);
  std::string variant = stem;
  if (threshold_override) {
    variant += "-t" + util::format_double(*threshold_override);
  }
  const auto dir = ctx.out_dir / ("eval-" + variant);
  util::atomic_write_file(
      dir / "report.csv",
      evaluation_csv(rep, eval.counts, stem,
                     fed::mode_name(ctx.spec.federated.mode),
                     cfg.proba_threshold));
  util::atomic_write_file(dir / "verdicts.jsonl", verdicts);
  write_manifest(ctx, "evaluate", variant,
                 {std::filesystem::path("eval-" + variant) / "report.csv",
                  std::filesystem::path("eval-" + variant) / "verdicts.jsonl"});
}

void cmd_calibrate(const CommandContext& ctx,
                   const std::filesystem::path& checkpoint) {
  const auto split = load_split(ctx);
  const auto embedder = make_embedder(ctx.spec);
  const auto m = model::from_checkpoint(util::read_file(checkpoint));
  std::vector<corpus::Conversation> negatives;
  for (const auto& conv : split.test) {
    if (conv.label == 0) negatives.push_back(conv);
  }
  if (negatives.empty()) {
    throw std::runtime_error("calibrate: no negative test conversations");
  }
  const auto result = metrics::calibrate_threshold(
      m, embedder, negatives, ctx.spec.espd, ctx.spec.evaluation.target_fpr);

  json cal;
  cal["target_fpr"] = ctx.spec.evaluation.target_fpr;
  cal["default_threshold"] = ctx.spec.espd.proba_threshold;
  cal["threshold"] = result.threshold;
  cal["achieved_fpr"] = result.achieved_fpr;
  cal["attainable"] = result.attainable;
  if (!result.attainable) {
    cal["note"] = "target unattainable, best=" +
                  util::format_double(result.achieved_fpr) + " at threshold " +
                  util::format_double(result.threshold);
  }

  const std::string stem = eval_stem(checkpoint);
  const auto dir = ctx.out_dir / ("calibrate-" + stem);
  util::atomic_write_file(dir / "calibration.json", cal.dump(2) + "\n");

  // Re-evaluate the full test set at the calibrated threshold.
  espd::EspdConfig cfg = ctx.spec.espd;
  cfg.proba_threshold = result.threshold;
  const double p = penalty_rate(ctx.spec, split);
  const auto eval = espd::evaluate_testset(m, embedder, split.test, cfg);
  const auto rep = metrics::report(eval.counts, eval.latencies, p);
  util::atomic_write_file(
      dir / "report.csv",
      evaluation_csv(rep, eval.counts, stem + "-calibrated",
                     fed::mode_name(ctx.spec.federated.mode),
                     cfg.proba_threshold));
  write_manifest(ctx, "calibrate", stem,
                 {std::filesystem::path("calibrate-" + stem) / "calibration.json",
                  std::filesystem::path("calibrate-" + stem) / "report.csv"});
}

void cmd_attack(const CommandContext& ctx) {
  const auto split = load_split(ctx);
  const auto embedder = make_embedder(ctx.spec);

  // Reference set: training-segment embeddings, capped at n_reference.
  std::vector<corpus::Segment> segments;
  for (const auto& conv : split.train) {
    for (auto& seg : corpus::segment(conv)) segments.push_back(std::move(seg));
    if (segments.size() >= static_cast<std::size_t>(ctx.spec.attack.n_reference)) {
      break;
    }
  }
  if (segments.size() > static_cast<std::size_t>(ctx.spec.attack.n_reference)) {
    segments.resize(static_cast<std::size_t>(ctx.spec.attack.n_reference));
  }
  std::vector<embed::EmbeddingVector> reference(segments.size());
  util::parallel_for(segments.size(), [&](std::size_t i) {
    reference[i] = embedder.embed_segment(segments[i]);
  });

  const auto etas = ctx.spec.attack.etas.empty() ? attack::default_eta_sweep()
                                                 : ctx.spec.attack.etas;
  const auto results = attack::sweep_eta(
      reference, etas, rng::derive_seed(ctx.spec.seed, kSeedAttack));

  std::string csv = "eta,accuracy,n_trials\n";
  for (const auto& r : results) {
    csv += util::format_double(r.eta);
    csv += ',';
    csv += util::format_double(r.accuracy);
    csv += ',';
    csv += std::to_string(r.n_trials);
    csv += '\n';
  }
  util::atomic_write_file(ctx.out_dir / "attack" / "sweep.csv", csv);
  write_manifest(ctx, "attack", "",
                 {std::filesystem::path("attack") / "sweep.csv"});
}

void cmd_report(const CommandContext& ctx,
                const std::filesystem::path& checkpoint) {
  const auto split = load_split(ctx);
  if (split.test.empty()) {
    throw std::runtime_error("report: test set is empty");
  }
  const auto embedder = make_embedder(ctx.spec);
  const auto m = model::from_checkpoint(util::read_file(checkpoint));
  const double p = penalty_rate(ctx.spec, split);

  // Probability traces once; the threshold sweep reuses them.
  std::vector<std::vector<double>> traces(split.test.size());
  util::parallel_for(split.test.size(), [&](std::size_t i) {
    const auto verdict =
        espd::classify_stream(m, embedder, split.test[i], ctx.spec.espd);
    for (const auto& step : verdict.window_trace) {
      traces[i].push_back(step.probability);
    }
  });

  std::set<double> grid = {ctx.spec.espd.proba_threshold};
  for (const auto& trace : traces) {
    for (const double s : trace) grid.insert(s);
  }
  // Thin the grid to keep the sweep plot-sized.
  std::vector<double> thresholds(grid.begin(), grid.end());
  if (thresholds.size() > 200) {
    std::vector<double> thinned;
    const double stride =
        static_cast<double>(thresholds.size() - 1) / 199.0;
    for (int k = 0; k < 200; ++k) {
      thinned.push_back(
          thresholds[static_cast<std::size_t>(std::lround(k * stride))]);
    }
    thresholds = std::move(thinned);
  }

  std::string sweep_csv = "threshold,fpr,f1,speed,f_latency\n";
  for (const double t : thresholds) {
    espd::EspdConfig cfg = ctx.spec.espd;
    cfg.proba_threshold = t;
    metrics::ConfusionCounts counts;
    std::vector<int> latencies;
    for (std::size_t i = 0; i < split.test.size(); ++i) {
      const auto step = espd::first_warning_step(traces[i], cfg);
      const bool positive = split.test[i].label == 1;
      if (step.has_value()) {
        if (positive) {
          ++counts.tp;
          latencies.push_back(espd::latency_at_step(
              *step, split.test[i].messages.size(), cfg.window_len));
        } else {
          ++counts.fp;
        }
      } else {
        positive ? ++counts.fn : ++counts.tn;
      }
    }
    const auto rep = metrics::report(counts, latencies, p);
    sweep_csv += util::format_double(t);
    sweep_csv += ',';
    sweep_csv += optional_field(rep.fpr);
    sweep_csv += ',';
    sweep_csv += util::format_double(rep.f1);
    sweep_csv += ',';
    sweep_csv += optional_field(rep.speed);
    sweep_csv += ',';
    sweep_csv += util::format_double(rep.f_latency);
    sweep_csv += '\n';
  }

  std::string latency_csv = "conversation_id,latency\n";
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    if (split.test[i].label != 1) continue;
    const auto step = espd::first_warning_step(traces[i], ctx.spec.espd);
    if (step.has_value()) {
      latency_csv += split.test[i].id;
      latency_csv += ',';
      latency_csv += std::to_string(espd::latency_at_step(
          *step, split.test[i].messages.size(), ctx.spec.espd.window_len));
      latency_csv += '\n';
    }
  }

  const std::string stem = eval_stem(checkpoint);
  const auto dir = ctx.out_dir / ("report-" + stem);
  util::atomic_write_file(dir / "fpr_sweep.csv", sweep_csv);
  util::atomic_write_file(dir / "latencies.csv", latency_csv);
  write_manifest(ctx, "report", stem,
                 {std::filesystem::path("report-" + stem) / "fpr_sweep.csv",
                  std::filesystem::path("report-" + stem) / "latencies.csv"});
}

}  // namespace fedspd::cli
