#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedspd/corpus.hpp"
#include "fedspd/dp.hpp"
#include "fedspd/embed.hpp"
#include "fedspd/model.hpp"
#include "fedspd/rng.hpp"

namespace fedspd::fed {

enum class Mode { kPlain, kMetricDp, kDpSgd, kDpFedAvg };

std::string mode_name(Mode mode);
Mode mode_from_name(const std::string& name);

enum class ClientKind { kOg, kNonOg };

struct ClientState {
  int client_id = 0;
  // Own segments first, then the balanced warm-up share. In metric-DP mode
  // these hold only perturbed features; raw embeddings are never stored.
  std::vector<model::TrainingExample> examples;
  int n_own = 0;
  ClientKind kind = ClientKind::kNonOg;
  bool features_perturbed = false;
};

struct ClientUpdate {
  int client_id = 0;
  std::vector<double> delta;  // weights followed by bias
  int n_examples = 0;
  double update_norm = 0.0;   // L2 norm of delta as shared
  bool clipped = false;       // dp_fedavg: raw norm exceeded the clip level
};

struct FederatedConfig {
  int total_clients = 10000;
  int rounds = 100;
  double sample_fraction = 0.1;
  int local_epochs = 5;
  double lr = 0.01;
  int batch_size = 32;
  double l2 = 0.0;
  Mode mode = Mode::kPlain;
  dp::MetricDpParams metric_dp{};
  dp::DpSgdParams dp_sgd{};
  dp::DpFedAvgParams dp_fedavg{};
  // When > 0, OG clients train on prefix-oversampled segments of their
  // conversation instead of the plain segmentation.
  int oversample_step = 0;
  std::uint64_t seed = 0;
};

struct RoundRecord {
  int round = 0;
  std::string model_sha256;
  double mean_client_loss = 0.0;
  std::vector<int> sampled_clients;
  double clip_level = 0.0;                  // dp_fedavg only
  std::optional<double> epsilon_so_far;     // dp modes with z > 0
  std::optional<double> epsilon_upper_so_far;  // dp_sgd linear composition
};

struct TrainingHistory {
  std::vector<RoundRecord> rounds;
};

struct TrainResult {
  model::LogisticModel model;
  TrainingHistory history;
  int max_participations = 0;  // most rounds any single client trained in
};

// Seed for one local epoch; train_centralized shares this discipline with
// client 0 so that single-client federated training is bit-identical to
// centralized training.
inline std::uint64_t local_epoch_seed(std::uint64_t seed, int client_id,
                                      int round_no, int epoch) {
  return rng::derive_seed(rng::mix(seed, rng::kTagLocalTrain),
                          static_cast<std::uint64_t>(client_id),
                          static_cast<std::uint64_t>(round_no),
                          static_cast<std::uint64_t>(epoch));
}

// One client per sampled training conversation; negative seeds pool 10 more
// negative conversations; everyone gets a balanced 10+10 warm-up share.
std::vector<ClientState> build_clients(
    const std::vector<corpus::Conversation>& train,
    const std::vector<corpus::Segment>& warmup, const embed::Embedder& embedder,
    const FederatedConfig& cfg);

// ceil(fraction * N) distinct clients, deterministic in (seed, round_no);
// returned as sorted indices into `all`.
std::vector<std::size_t> sample_clients(const std::vector<ClientState>& all,
                                        double fraction, int round_no,
                                        std::uint64_t seed);

// current_update_clip <= 0 means the configured dp_fedavg clip level.
ClientUpdate local_train(const ClientState& client,
                         const model::LogisticModel& global_model,
                         const FederatedConfig& cfg, int round_no,
                         double current_update_clip = -1.0);

// Example-count-weighted average of deltas; dp_fedavg mode instead takes the
// flat average of clipped deltas and adds server noise from server_rng.
// Updates are accumulated in sorted-client-id order.
std::vector<double> fedavg_aggregate(const std::vector<ClientUpdate>& updates,
                                     const FederatedConfig& cfg,
                                     rng::Rng* server_rng = nullptr,
                                     double current_update_clip = -1.0);

TrainResult run_training(const std::vector<ClientState>& clients,
                         const FederatedConfig& cfg, int dimension);

// Builds clients from the splits, then runs the rounds.
TrainResult run_training(const corpus::DatasetSplit& splits,
                         const embed::Embedder& embedder,
                         const FederatedConfig& cfg);

// Plain centralized SGD under the shared seed discipline (client 0, one
// epoch per round).
model::LogisticModel train_centralized(
    const model::LogisticModel& init,
    const std::vector<model::TrainingExample>& data, int epochs, double lr,
    int batch_size, std::uint64_t seed, double l2 = 0.0);

std::vector<model::TrainingExample> embed_segments(
    const std::vector<corpus::Segment>& segments,
    const embed::Embedder& embedder);

}  // namespace fedspd::fed
