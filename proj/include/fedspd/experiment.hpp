#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedspd/attack.hpp"
#include "fedspd/corpus.hpp"
#include "fedspd/embed.hpp"
#include "fedspd/espd.hpp"
#include "fedspd/fed.hpp"
#include "fedspd/metrics.hpp"

namespace fedspd::cli {

// Bad specs, flags, or refused overwrites; exits with a distinct code.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CorpusSource {
  bool synthetic = true;
  corpus::SyntheticCorpusConfig synthetic_cfg;
  int test_n_positive = 40;
  int test_n_negative = 360;
  std::string conversations_path;  // file mode
  std::string test_path;
};

struct EvaluationOptions {
  double target_fpr = 0.01;
  std::optional<double> p_override;
  std::string median_source = "positive_train";  // or "all_train"
};

struct AttackOptions {
  std::vector<double> etas;  // empty = the default sweep
  int n_reference = 10000;
};

struct ExperimentSpec {
  std::uint64_t seed = 0;
  CorpusSource corpus;
  embed::EmbedderSpec embedder;
  fed::FederatedConfig federated;
  espd::EspdConfig espd;
  EvaluationOptions evaluation;
  AttackOptions attack;
};

ExperimentSpec parse_spec(const std::string& json_text);
ExperimentSpec load_spec(const std::filesystem::path& path);

struct CommandContext {
  ExperimentSpec spec;
  std::string spec_sha256;
  std::filesystem::path out_dir;
  bool force = false;
};

CommandContext make_context(const std::filesystem::path& spec_path,
                            const std::filesystem::path& out_dir, bool force,
                            std::optional<std::uint64_t> seed_override = {},
                            const std::string& mode_override = "");

void cmd_gen_corpus(const CommandContext& ctx);

// baseline: "" (federated), "warmup" or "centralized".
void cmd_train(const CommandContext& ctx, const std::string& baseline = "");

void cmd_evaluate(const CommandContext& ctx,
                  const std::filesystem::path& checkpoint,
                  std::optional<double> threshold_override = {});

void cmd_calibrate(const CommandContext& ctx,
                   const std::filesystem::path& checkpoint);

void cmd_attack(const CommandContext& ctx);

void cmd_report(const CommandContext& ctx,
                const std::filesystem::path& checkpoint);

// Shared helpers, also exercised directly by the test suites.
corpus::DatasetSplit load_split(const CommandContext& ctx);
embed::Embedder make_embedder(const ExperimentSpec& spec);
double penalty_rate(const ExperimentSpec& spec,
                    const corpus::DatasetSplit& split);
std::string evaluation_csv(const metrics::EvaluationReport& rep,
                           const metrics::ConfusionCounts& counts,
                           const std::string& model_name,
                           const std::string& mode, double threshold);

}  // namespace fedspd::cli
