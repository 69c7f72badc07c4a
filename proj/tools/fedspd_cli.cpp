#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedspd/experiment.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

struct CommonArgs {
  std::string spec_path;
  std::string out_dir = "runs/default";
  std::optional<std::uint64_t> seed;
  std::string mode;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_mode = true) {
  cmd->add_option("--spec", args.spec_path, "Experiment spec file (JSON)")
      ->required();
  cmd->add_option("--out", args.out_dir, "Output directory");
  cmd->add_option("--seed", args.seed, "Override the spec seed");
  if (with_mode) {
    cmd->add_option("--mode", args.mode,
                    "Training mode: plain | metric-dp | dp-sgd | dp-fedavg");
  }
  cmd->add_flag("--force", args.force, "Overwrite existing outputs");
}

fedspd::cli::CommandContext context_for(const CommonArgs& args) {
  return fedspd::cli::make_context(args.spec_path, args.out_dir, args.force,
                                   args.seed, args.mode);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedspd: federated early-warning training and evaluation"};
  app.require_subcommand(1);

  CommonArgs gen_args;
  auto* gen = app.add_subcommand("gen-corpus",
                                 "Generate or ingest the conversation corpus");
  add_common(gen, gen_args, /*with_mode=*/false);

  CommonArgs train_args;
  std::string baseline;
  auto* train = app.add_subcommand("train", "Run federated training");
  add_common(train, train_args);
  train->add_option("--baseline", baseline,
                    "Train a baseline instead: warmup | centralized");

  CommonArgs eval_args;
  std::string eval_checkpoint;
  std::optional<double> eval_threshold;
  auto* evaluate =
      app.add_subcommand("evaluate", "Stream-evaluate a checkpoint on the test set");
  add_common(evaluate, eval_args);
  evaluate->add_option("--checkpoint", eval_checkpoint, "Model checkpoint file")
      ->required();
  evaluate->add_option("--threshold", eval_threshold,
                       "Override the window probability threshold");

  CommonArgs cal_args;
  std::string cal_checkpoint;
  auto* calibrate = app.add_subcommand(
      "calibrate", "Find the threshold meeting the target FPR and re-evaluate");
  add_common(calibrate, cal_args);
  calibrate->add_option("--checkpoint", cal_checkpoint, "Model checkpoint file")
      ->required();

  CommonArgs attack_args;
  auto* attack = app.add_subcommand(
      "attack", "Embedding-inversion sweep over the metric-DP noise levels");
  add_common(attack, attack_args, /*with_mode=*/false);

  CommonArgs report_args;
  std::string report_checkpoint;
  auto* report = app.add_subcommand(
      "report", "FPR sweep and warning-latency distribution for a checkpoint");
  add_common(report, report_args);
  report->add_option("--checkpoint", report_checkpoint, "Model checkpoint file")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      fedspd::cli::cmd_gen_corpus(context_for(gen_args));
    } else if (train->parsed()) {
      fedspd::cli::cmd_train(context_for(train_args), baseline);
    } else if (evaluate->parsed()) {
      fedspd::cli::cmd_evaluate(context_for(eval_args), eval_checkpoint,
                                eval_threshold);
    } else if (calibrate->parsed()) {
      fedspd::cli::cmd_calibrate(context_for(cal_args), cal_checkpoint);
    } else if (attack->parsed()) {
      fedspd::cli::cmd_attack(context_for(attack_args));
    } else if (report->parsed()) {
      fedspd::cli::cmd_report(context_for(report_args), report_checkpoint);
    }
  } catch (const fedspd::cli::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
