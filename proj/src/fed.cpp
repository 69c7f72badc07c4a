#include "fedspd/fed.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "fedspd/util.hpp"

namespace fedspd::fed {

namespace {

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x * x;
  return std::sqrt(s);
}

// Per-participation RDP curve of one client's DP-SGD run.
dp::RdpCurve participation_curve(const FederatedConfig& cfg, int n_examples) {
  const int batch = std::min(cfg.batch_size, n_examples);
  const double q = static_cast<double>(batch) / n_examples;
  const long long batches_per_epoch = (n_examples + batch - 1) / batch;
  const long long steps = batches_per_epoch * cfg.local_epochs;
  return dp::rdp_subsampled_gaussian(q, cfg.dp_sgd.noise_multiplier, steps,
                                     dp::default_rdp_orders());
}

dp::RdpCurve scale_curve(const dp::RdpCurve& curve, int times) {
  dp::RdpCurve out = curve;
  for (auto& v : out.rdp_values) v *= static_cast<double>(times);
  return out;
}

}  // namespace

std::string mode_name(Mode mode) {
  switch (mode) {
    case Mode::kPlain: return "plain";
    case Mode::kMetricDp: return "metric_dp";
    case Mode::kDpSgd: return "dp_sgd";
    case Mode::kDpFedAvg: return "dp_fedavg";
  }
  return "plain";
}

Mode mode_from_name(const std::string& name) {
  if (name == "plain") return Mode::kPlain;
  if (name == "metric_dp" || name == "metric-dp") return Mode::kMetricDp;
  if (name == "dp_sgd" || name == "dp-sgd") return Mode::kDpSgd;
  if (name == "dp_fedavg" || name == "dp-fedavg") return Mode::kDpFedAvg;
  throw std::invalid_argument("unknown mode: " + name);
}

std::vector<model::TrainingExample> embed_segments(
    const std::vector<corpus::Segment>& segments,
    const embed::Embedder& embedder) {
  std::vector<model::TrainingExample> out(segments.size());
  util::parallel_for(segments.size(), [&](std::size_t i) {
    out[i] = {embedder.embed_segment(segments[i]), segments[i].label};
  });
  return out;
}

std::vector<ClientState> build_clients(
    const std::vector<corpus::Conversation>& train,
    const std::vector<corpus::Segment>& warmup, const embed::Embedder& embedder,
    const FederatedConfig& cfg) {
  if (cfg.total_clients < 1) {
    throw std::invalid_argument("build_clients: total_clients must be >= 1");
  }
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < train.size(); ++i) {
    (train[i].label == 1 ? positives : negatives).push_back(i);
  }
  if (positives.empty() || negatives.size() < 11) {
    throw std::invalid_argument(
        "build_clients: need at least 1 positive and 11 negative training "
        "conversations");
  }
  std::vector<std::size_t> warm_pos;
  std::vector<std::size_t> warm_neg;
  for (std::size_t i = 0; i < warmup.size(); ++i) {
    (warmup[i].label == 1 ? warm_pos : warm_neg).push_back(i);
  }
  if (warm_pos.size() < 10 || warm_neg.size() < 10) {
    throw std::invalid_argument(
        "build_clients: warm-up pool needs >= 10 segments per label");
  }

  // Per-conversation training examples, shared across clients.
  std::vector<std::vector<model::TrainingExample>> conv_examples(train.size());
  util::parallel_for(train.size(), [&](std::size_t i) {
    const auto segments =
        (cfg.oversample_step > 0 && train[i].label == 1)
            ? corpus::oversample_prefixes({train[i]}, cfg.oversample_step)
            : corpus::segment(train[i]);
    for (const auto& seg : segments) {
      conv_examples[i].push_back({embedder.embed_segment(seg), seg.label});
    }
  });
  std::vector<model::TrainingExample> warm_examples =
      embed_segments(warmup, embedder);

  std::vector<ClientState> clients(static_cast<std::size_t>(cfg.total_clients));
  util::parallel_for(clients.size(), [&](std::size_t c) {
    rng::Rng r(rng::derive_seed(cfg.seed, rng::kTagBuildClients, c));
    ClientState state;
    state.client_id = static_cast<int>(c);

    const std::size_t seed_conv = r.below(train.size());
    std::vector<std::size_t> own_convs = {seed_conv};
    if (train[seed_conv].label == 1) {
      state.kind = ClientKind::kOg;
    } else {
      state.kind = ClientKind::kNonOg;
      // Pool 10 additional negative conversations (11 in total).
      std::vector<std::size_t> pool;
      pool.reserve(negatives.size());
      for (const auto idx : negatives) {
        if (idx != seed_conv) pool.push_back(idx);
      }
      for (const auto pick : r.sample_without_replacement(
               pool.size(), std::min<std::size_t>(10, pool.size()))) {
        own_convs.push_back(pool[pick]);
      }
    }
    for (const auto conv : own_convs) {
      for (const auto& ex : conv_examples[conv]) state.examples.push_back(ex);
    }
    state.n_own = static_cast<int>(state.examples.size());

    for (const auto pick : r.sample_without_replacement(warm_pos.size(), 10)) {
      state.examples.push_back(warm_examples[warm_pos[pick]]);
    }
    for (const auto pick : r.sample_without_replacement(warm_neg.size(), 10)) {
      state.examples.push_back(warm_examples[warm_neg[pick]]);
    }

    if (cfg.mode == Mode::kMetricDp) {
      dp::MetricDpParams params = cfg.metric_dp;
      params.dimension = embedder.dimension();
      rng::Rng noise(rng::derive_seed(cfg.seed, rng::kTagMetricDp, c));
      for (auto& ex : state.examples) {
        ex.features = dp::metric_dp_perturb(ex.features, params, noise);
      }
      state.features_perturbed = true;
    }
    clients[c] = std::move(state);
  });
  return clients;
}

std::vector<std::size_t> sample_clients(const std::vector<ClientState>& all,
                                        double fraction, int round_no,
                                        std::uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) {
    throw std::invalid_argument("sample_clients: fraction must be in (0, 1]");
  }
  const auto n = all.size();
  const auto k = static_cast<std::size_t>(
      std::min<double>(static_cast<double>(n),
                       std::ceil(fraction * static_cast<double>(n))));
  rng::Rng r(rng::derive_seed(seed, rng::kTagClientSample,
                              static_cast<std::uint64_t>(round_no)));
  auto picks = r.sample_without_replacement(n, k);
  std::sort(picks.begin(), picks.end());
  return picks;
}

ClientUpdate local_train(const ClientState& client,
                         const model::LogisticModel& global_model,
                         const FederatedConfig& cfg, int round_no,
                         double current_update_clip) {
  model::LogisticModel local = global_model;
  const int n = static_cast<int>(client.examples.size());
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto seed =
        local_epoch_seed(cfg.seed, client.client_id, round_no, epoch);
    if (cfg.mode == Mode::kDpSgd) {
      dp::DpSgdParams params = cfg.dp_sgd;
      params.batch_size = std::min(cfg.batch_size, n);
      params.dataset_size = n;
      local = dp::dpsgd_epoch(local, client.examples, params, cfg.lr, seed,
                              cfg.l2);
    } else {
      local = model::sgd_epoch(local, client.examples, cfg.lr, cfg.batch_size,
                               seed, cfg.l2);
    }
  }

  ClientUpdate update;
  update.client_id = client.client_id;
  update.n_examples = n;
  update.delta.resize(global_model.weights.size() + 1);
  for (std::size_t i = 0; i < global_model.weights.size(); ++i) {
    update.delta[i] = local.weights[i] - global_model.weights[i];
  }
  update.delta.back() = local.bias - global_model.bias;

  if (cfg.mode == Mode::kDpFedAvg) {
    const double clip = current_update_clip > 0.0
                            ? current_update_clip
                            : cfg.dp_fedavg.update_clip;
    const double raw_norm = l2_norm(update.delta);
    update.clipped = raw_norm > clip;
    if (update.clipped) update.delta = dp::clip_vector(update.delta, clip);
  }
  update.update_norm = l2_norm(update.delta);
  return update;
}

std::vector<double> fedavg_aggregate(const std::vector<ClientUpdate>& updates,
                                     const FederatedConfig& cfg,
                                     rng::Rng* server_rng,
                                     double current_update_clip) {
  if (updates.empty()) {
    throw std::invalid_argument("fedavg_aggregate: no updates");
  }
  const auto dim = updates.front().delta.size();
  std::vector<std::size_t> order(updates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  std::vector<double> out(dim, 0.0);
  if (cfg.mode == Mode::kDpFedAvg) {
    for (const auto i : order) {
      const auto& u = updates[i];
      if (u.delta.size() != dim) {
        throw std::invalid_argument("fedavg_aggregate: dimension mismatch");
      }
      for (std::size_t k = 0; k < dim; ++k) out[k] += u.delta[k];
    }
    const double m = static_cast<double>(updates.size());
    for (auto& x : out) x /= m;
    if (cfg.dp_fedavg.noise_multiplier > 0.0) {
      if (server_rng == nullptr) {
        throw std::invalid_argument(
            "fedavg_aggregate: dp_fedavg noise needs a server rng");
      }
      dp::DpFedAvgParams params = cfg.dp_fedavg;
      params.clients_per_round = static_cast<int>(updates.size());
      if (current_update_clip > 0.0) params.update_clip = current_update_clip;
      out = dp::dp_fedavg_noise(out, params, *server_rng);
    }
    return out;
  }

  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.n_examples);
  for (const auto i : order) {
    const auto& u = updates[i];
    if (u.delta.size() != dim) {
      throw std::invalid_argument("fedavg_aggregate: dimension mismatch");
    }
    const double w = static_cast<double>(u.n_examples) / total;
    for (std::size_t k = 0; k < dim; ++k) out[k] += w * u.delta[k];
  }
  return out;
}

TrainResult run_training(const std::vector<ClientState>& clients,
                         const FederatedConfig& cfg, int dimension) {
  if (clients.empty()) {
    throw std::invalid_argument("run_training: no clients");
  }
  if (cfg.rounds < 0) {
    throw std::invalid_argument("run_training: rounds must be >= 0");
  }
  TrainResult result;
  result.model = model::LogisticModel::zeros(dimension);

  // Distinct per-participation accountant curves, keyed by client data size.
  std::map<int, dp::RdpCurve> sgd_curves;
  if (cfg.mode == Mode::kDpSgd && cfg.dp_sgd.noise_multiplier > 0.0) {
    for (const auto& c : clients) {
      const int n = static_cast<int>(c.examples.size());
      if (!sgd_curves.count(n)) sgd_curves[n] = participation_curve(cfg, n);
    }
  }

  std::vector<int> participations(clients.size(), 0);
  double clip_level = cfg.dp_fedavg.update_clip;

  for (int round = 0; round < cfg.rounds; ++round) {
    const auto sampled =
        sample_clients(clients, cfg.sample_fraction, round, cfg.seed);
    std::vector<ClientUpdate> updates(sampled.size());
    util::parallel_for(sampled.size(), [&](std::size_t i) {
      updates[i] = local_train(clients[sampled[i]], result.model, cfg, round,
                               clip_level);
    });
    for (const auto c : sampled) ++participations[c];

    double next_clip = clip_level;
    if (cfg.mode == Mode::kDpFedAvg && cfg.dp_fedavg.adaptive) {
      std::size_t unclipped = 0;
      for (const auto& u : updates) {
        if (!u.clipped) ++unclipped;
      }
      rng::Rng ind(rng::derive_seed(cfg.seed, rng::kTagClipIndicator,
                                    static_cast<std::uint64_t>(round)));
      const double noisy =
          static_cast<double>(unclipped) +
          cfg.dp_fedavg.indicator_noise_std * ind.normal();
      const double fraction = noisy / static_cast<double>(updates.size());
      next_clip = dp::adaptive_clip_update(clip_level, fraction,
                                           cfg.dp_fedavg.target_quantile,
                                           cfg.dp_fedavg.clip_lr);
    }

    rng::Rng server_rng(rng::derive_seed(cfg.seed, rng::kTagServerNoise,
                                         static_cast<std::uint64_t>(round)));
    const auto agg = fedavg_aggregate(updates, cfg, &server_rng, clip_level);
    for (std::size_t i = 0; i < result.model.weights.size(); ++i) {
      result.model.weights[i] += agg[i];
    }
    result.model.bias += agg.back();

    RoundRecord record;
    record.round = round;
    record.model_sha256 = util::sha256_hex(model::to_checkpoint(result.model));
    record.sampled_clients.reserve(sampled.size());
    for (const auto c : sampled) {
      record.sampled_clients.push_back(static_cast<int>(c));
    }
    double loss_sum = 0.0;
    for (const auto c : sampled) {
      loss_sum += model::bce_loss(result.model, clients[c].examples);
    }
    record.mean_client_loss = loss_sum / static_cast<double>(sampled.size());
    if (cfg.mode == Mode::kDpFedAvg) {
      record.clip_level = clip_level;
      if (cfg.dp_fedavg.noise_multiplier > 0.0) {
        dp::DpFedAvgParams params = cfg.dp_fedavg;
        params.total_clients = static_cast<int>(clients.size());
        params.clients_per_round = static_cast<int>(sampled.size());
        params.rounds = round + 1;
        record.epsilon_so_far = dp::user_level_budget(params).epsilon;
      }
    } else if (cfg.mode == Mode::kDpSgd && !sgd_curves.empty()) {
      const int k_max =
          *std::max_element(participations.begin(), participations.end());
      double eps = 0.0;
      double eps_upper = 0.0;
      for (const auto& [n, curve] : sgd_curves) {
        eps = std::max(eps, dp::rdp_to_dp(curve, cfg.dp_sgd.delta).epsilon);
        eps_upper = std::max(
            eps_upper,
            dp::rdp_to_dp(scale_curve(curve, k_max), cfg.dp_sgd.delta).epsilon);
      }
      record.epsilon_so_far = eps;  // per participation
      record.epsilon_upper_so_far = eps_upper;
    }
    clip_level = next_clip;
    result.history.rounds.push_back(std::move(record));
  }
  result.max_participations =
      participations.empty()
          ? 0
          : *std::max_element(participations.begin(), participations.end());
  return result;
}

TrainResult run_training(const corpus::DatasetSplit& splits,
                         const embed::Embedder& embedder,
                         const FederatedConfig& cfg) {
  const auto clients = build_clients(splits.train, splits.warmup, embedder, cfg);
  return run_training(clients, cfg, embedder.dimension());
}

model::LogisticModel train_centralized(
    const model::LogisticModel& init,
    const std::vector<model::TrainingExample>& data, int epochs, double lr,
    int batch_size, std::uint64_t seed, double l2) {
  model::LogisticModel m = init;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    m = model::sgd_epoch(m, data, lr, batch_size,
                         local_epoch_seed(seed, 0, epoch, 0), l2);
  }
  return m;
}

}  // namespace fedspd::fed
