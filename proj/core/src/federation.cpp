#include "heterofl/federation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "heterofl/nn/loss.hpp"
#include "heterofl/nn/optimizer.hpp"
#include "heterofl/parallel.hpp"

namespace heterofl::fed {

namespace {

// Stream purposes; the reference-loop oracles in the tests share these.
constexpr const char* kInitPurpose = "model-init";
constexpr const char* kClientSample = "client-sample";
constexpr const char* kLevelSample = "level-sample";
constexpr const char* kBatchShuffle = "batch-shuffle";
constexpr const char* kFixAssign = "fix-assign";

void validate(const FederationConfig& cfg, const data::Partition& partition) {
  if (cfg.clients == 0) throw std::invalid_argument("federation: clients must be >= 1");
  if (!(cfg.active_fraction > 0.0) || cfg.active_fraction > 1.0) {
    throw std::invalid_argument("federation: active fraction must lie in (0, 1]");
  }
  if (cfg.batch_size == 0) throw std::invalid_argument("federation: batch size must be >= 1");
  if (cfg.levels.empty()) throw std::invalid_argument("federation: at least one level required");
  for (const auto& l : cfg.levels) {
    if (l.p < 1 || !(l.shrink > 0.0) || l.shrink > 1.0) {
      throw std::invalid_argument("federation: invalid level spec");
    }
  }
  if (!(cfg.decay_factor > 0.0) || cfg.decay_factor > 1.0) {
    throw std::invalid_argument("federation: decay factor must lie in (0, 1]");
  }
  if (partition.clients() != cfg.clients) {
    throw std::invalid_argument("federation: partition covers " +
                                std::to_string(partition.clients()) + " clients, config says " +
                                std::to_string(cfg.clients));
  }
  if (cfg.assignment == Assignment::fix) {
    double total = 0.0;
    for (const auto& [label, p] : cfg.fix_proportions) {
      bool known = false;
      for (const auto& l : cfg.levels) known |= (l.label == label);
      if (!known) {
        throw std::invalid_argument(std::string("federation: fix proportion for unknown level '") +
                                    label + "'");
      }
      if (p < 0.0) throw std::invalid_argument("federation: fix proportions must be >= 0");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw std::invalid_argument("federation: fix proportions must sum to 1");
    }
  }
}

/// Fix-mode assignment: apportion clients to levels by largest remainder,
/// then shuffle the slots so levels do not correlate with shard identity.
std::vector<std::size_t> fix_assignment(const FederationConfig& cfg) {
  const std::size_t m = cfg.clients;
  std::vector<double> quota(cfg.levels.size(), 0.0);
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    auto it = cfg.fix_proportions.find(cfg.levels[i].label);
    quota[i] = (it == cfg.fix_proportions.end() ? 0.0 : it->second) * static_cast<double>(m);
  }
  std::vector<std::size_t> count(quota.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < quota.size(); ++i) {
    count[i] = static_cast<std::size_t>(std::floor(quota[i]));
    assigned += count[i];
  }
  while (assigned < m) {
    std::size_t best = 0;
    double best_frac = -1.0;
    for (std::size_t i = 0; i < quota.size(); ++i) {
      const double frac = quota[i] - std::floor(quota[i]) - (count[i] > std::floor(quota[i]) ? 1.0 : 0.0);
      if (frac > best_frac + 1e-12) {
        best_frac = frac;
        best = i;
      }
    }
    ++count[best];
    ++assigned;
  }
  std::vector<std::size_t> slots;
  slots.reserve(m);
  for (std::size_t i = 0; i < count.size(); ++i) slots.insert(slots.end(), count[i], i);
  Rng rng = Rng::stream(cfg.seed, kFixAssign);
  rng.shuffle(slots);
  return slots;
}

template <class S>
struct ClientOutcome {
  std::vector<std::pair<std::string, TensorT<S>>> params;
  double mean_loss = 0.0;
};

template <class S>
ClientOutcome<S> train_client(const FederationConfig& cfg, const zoo::ModelSpec& spec,
                              const data::DatasetT<S>& train,
                              std::span<const std::uint32_t> shard,
                              const std::set<std::int32_t>& label_set,
                              const zoo::LevelSpec& level, const zoo::LevelSpec& serving,
                              const agg::SliceSpec& slices, const agg::GlobalModelT<S>& gm,
                              std::uint32_t round, std::uint32_t client, double lr) {
  nn::Model<S> model = zoo::build_model<S>(spec, level, nullptr, &serving);
  model.load_params(std::span<const std::pair<std::string, TensorT<S>>>(
      agg::extract_local(gm, slices)));

  auto params = model.params();
  nn::SgdOptimizer<S> opt(lr, cfg.momentum, cfg.weight_decay, cfg.clip_norm);
  opt.attach(params);

  double loss_sum = 0.0;
  std::size_t batches_seen = 0;
  for (std::uint32_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    auto batches = data::make_batches(
        train, shard, cfg.batch_size,
        Rng::stream(cfg.seed, kBatchShuffle, round, client, epoch));
    for (auto& batch : batches) {
      TensorT<S> logits = model.forward(batch.features, nn::Mode::train);
      nn::LossResult<S> loss =
          cfg.masked_loss
              ? nn::masked_cross_entropy(logits, std::span<const std::int32_t>(batch.labels),
                                         label_set)
              : nn::cross_entropy(logits, std::span<const std::int32_t>(batch.labels));
      if (!std::isfinite(loss.loss)) {
        throw std::runtime_error("training diverged (non-finite loss)");
      }
      model.backward(loss.logit_grad);
      opt.step(params);
      loss_sum += loss.loss;
      ++batches_seen;
    }
  }

  ClientOutcome<S> out;
  out.params = model.harvest_params();
  out.mean_loss = batches_seen ? loss_sum / static_cast<double>(batches_seen) : 0.0;
  return out;
}

/// Streams every client's training shard, in client order, through `sink`.
template <class S>
void replay_all_clients(const data::DatasetT<S>& train, const data::Partition& partition,
                        std::size_t batch_size,
                        const std::function<void(const TensorT<S>&)>& sink) {
  for (const auto& shard : partition.assignment) {
    if (shard.empty()) continue;
    for (auto& batch : data::make_batches_sequential(train, shard, batch_size)) {
      sink(batch.features);
    }
  }
}

/// Builds the serving-level model, loads the global slice and recomputes
/// frozen sBN statistics over all clients' training data.
template <class S>
std::vector<nn::SbnSnapshot<S>> compute_sbn_stats(const FederationConfig& cfg,
                                                  const zoo::ModelSpec& spec,
                                                  const zoo::LevelSpec& serving,
                                                  const agg::GlobalModelT<S>& gm,
                                                  const data::DatasetT<S>& train,
                                                  const data::Partition& partition) {
  nn::Model<S> model = zoo::build_model<S>(spec, serving, nullptr, &serving);
  const agg::SliceSpec slices = agg::derive_slices(spec, serving);
  model.load_params(std::span<const std::pair<std::string, TensorT<S>>>(
      agg::extract_local(gm, slices)));
  nn::finalize_sbn_statistics<S>(
      model,
      [&](const std::function<void(const TensorT<S>&)>& sink) {
        replay_all_clients(train, partition, cfg.stats_batch, sink);
      },
      cfg.threads);
  return model.harvest_sbn_stats();
}

template <class S>
nn::Model<S> build_inference_model(const agg::GlobalModelT<S>& gm, const zoo::ModelSpec& spec,
                                   const zoo::LevelSpec& serving) {
  if (gm.sbn_stats.empty()) {
    throw std::runtime_error("evaluation requires frozen sBN statistics (finalize first)");
  }
  nn::Model<S> model = zoo::build_model<S>(spec, serving, nullptr, &serving);
  const agg::SliceSpec slices = agg::derive_slices(spec, serving);
  model.load_params(std::span<const std::pair<std::string, TensorT<S>>>(
      agg::extract_local(gm, slices)));
  model.install_sbn_stats(std::span<const nn::SbnSnapshot<S>>(gm.sbn_stats));
  return model;
}

template <class S>
std::int32_t argmax_class(const S* row, std::size_t classes) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < classes; ++c) {
    if (row[c] > row[best]) best = c;
  }
  return static_cast<std::int32_t>(best);
}

template <class S>
std::int32_t argmax_restricted(const S* row, const std::set<std::int32_t>& allowed) {
  std::int32_t best = -1;
  for (std::int32_t c : allowed) {
    if (best < 0 || row[c] > row[best]) best = c;
  }
  return best;
}

}  // namespace

double lr_at_round(const FederationConfig& cfg, std::uint32_t round) {
  double lr = cfg.lr;
  for (std::uint32_t m : cfg.decay_milestones) {
    if (round > m) lr *= cfg.decay_factor;
  }
  return lr;
}

std::uint32_t active_count(const FederationConfig& cfg) {
  const auto m = static_cast<std::uint32_t>(
      std::llround(cfg.active_fraction * static_cast<double>(cfg.clients)));
  return std::max<std::uint32_t>(1, std::min(m, cfg.clients));
}

const zoo::LevelSpec& serving_level(const FederationConfig& cfg) {
  const zoo::LevelSpec* best = &cfg.levels.front();
  for (const auto& l : cfg.levels) {
    if (l.p < best->p) best = &l;
  }
  return *best;
}

template <class S>
double evaluate_global(const agg::GlobalModelT<S>& gm, const zoo::ModelSpec& spec,
                       const zoo::LevelSpec& serving, const data::DatasetT<S>& test,
                       std::size_t batch_size, unsigned threads) {
  nn::Model<S> model = build_inference_model(gm, spec, serving);
  std::vector<std::uint32_t> all(test.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
  const auto batches = data::make_batches_sequential(test, all, batch_size);
  std::vector<std::size_t> correct(batches.size(), 0);
  parallel_for(batches.size(), threads, [&](std::size_t b) {
    TensorT<S> logits = model.forward_prefix(batches[b].features, model.layer_count(),
                                             nn::Mode::infer);
    const std::size_t classes = logits.dim(1);
    for (std::size_t i = 0; i < batches[b].labels.size(); ++i) {
      if (argmax_class(logits.data() + i * classes, classes) == batches[b].labels[i]) {
        ++correct[b];
      }
    }
  });
  std::size_t total = 0;
  for (std::size_t c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(test.size());
}

template <class S>
LocalEvalResult evaluate_local(const agg::GlobalModelT<S>& gm, const zoo::ModelSpec& spec,
                               const zoo::LevelSpec& serving, const data::DatasetT<S>& test,
                               const data::Partition& local_test, std::size_t batch_size,
                               unsigned threads) {
  nn::Model<S> model = build_inference_model(gm, spec, serving);
  LocalEvalResult out;
  std::vector<std::size_t> correct(local_test.clients(), 0);
  std::vector<std::size_t> totals(local_test.clients(), 0);
  std::vector<std::uint8_t> skipped(local_test.clients(), 0);
  parallel_for(local_test.clients(), threads, [&](std::size_t m) {
    const auto& shard = local_test.assignment[m];
    const auto& allowed = local_test.label_sets[m];
    if (shard.empty() || allowed.empty()) {
      skipped[m] = 1;
      return;
    }
    for (auto& batch : data::make_batches_sequential(test, shard, batch_size)) {
      TensorT<S> logits = model.forward_prefix(batch.features, model.layer_count(),
                                               nn::Mode::infer);
      const std::size_t classes = logits.dim(1);
      for (std::size_t i = 0; i < batch.labels.size(); ++i) {
        if (argmax_restricted(logits.data() + i * classes, allowed) == batch.labels[i]) {
          ++correct[m];
        }
      }
      totals[m] += batch.labels.size();
    }
  });
  std::size_t hits = 0, total = 0;
  for (std::size_t m = 0; m < local_test.clients(); ++m) {
    hits += correct[m];
    total += totals[m];
    out.skipped_shards += skipped[m];
  }
  out.accuracy = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  return out;
}

template <class S>
RunResult<S> run(const FederationConfig& cfg, const zoo::ModelSpec& spec,
                 const data::DatasetT<S>& train, const data::DatasetT<S>& test,
                 const data::Partition& partition, const data::Partition* local_test,
                 const RoundCallback& on_round) {
  validate(cfg, partition);
  const zoo::LevelSpec serving = serving_level(cfg);
  const zoo::LevelSpec full{'a', 1, cfg.levels.front().shrink};

  // Per-level slice specs, derived once.
  std::vector<agg::SliceSpec> level_slices;
  level_slices.reserve(cfg.levels.size());
  for (const auto& level : cfg.levels) level_slices.push_back(agg::derive_slices(spec, level));

  RunResult<S> result;
  {
    Rng init_rng = Rng::stream(cfg.seed, kInitPurpose);
    nn::Model<S> global_model = zoo::build_model<S>(spec, full, &init_rng);
    result.global.params = global_model.harvest_params();
    result.global.round = 0;
  }
  agg::GlobalModelT<S>& gm = result.global;

  std::vector<std::size_t> fixed_levels;
  if (cfg.assignment == Assignment::fix) fixed_levels = fix_assignment(cfg);

  const std::uint32_t m_active = active_count(cfg);

  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    const auto round_start = std::chrono::steady_clock::now();
    const double lr = lr_at_round(cfg, t);

    Rng sampler = Rng::stream(cfg.seed, kClientSample, t);
    const std::vector<std::uint32_t> active = sampler.sample_without_replacement(cfg.clients, m_active);

    // Resolve levels up front; dynamic levels are a pure function of
    // (seed, round, client), independent of sampling and thread schedule.
    std::vector<std::size_t> levels(active.size());
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (cfg.assignment == Assignment::fix) {
        levels[i] = fixed_levels[active[i]];
      } else {
        levels[i] = static_cast<std::size_t>(
            Rng::stream(cfg.seed, kLevelSample, t, active[i]).uniform_int(cfg.levels.size()));
      }
    }

    // Train the widest models first so the thread pool stays balanced.
    std::vector<std::size_t> order(active.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return cfg.levels[levels[a]].p < cfg.levels[levels[b]].p;
    });

    std::vector<ClientOutcome<S>> outcomes(active.size());
    parallel_for(order.size(), cfg.threads, [&](std::size_t k) {
      const std::size_t i = order[k];
      const std::uint32_t client = active[i];
      try {
        outcomes[i] = train_client(cfg, spec, train,
                                   std::span<const std::uint32_t>(partition.assignment[client]),
                                   partition.label_sets[client], cfg.levels[levels[i]], serving,
                                   level_slices[levels[i]], gm, t, client, lr);
      } catch (const std::exception& err) {
        throw std::runtime_error("round " + std::to_string(t) + ", client " +
                                 std::to_string(client) + ": " + err.what());
      }
    });

    // Canonical aggregation order: ascending client id (active is sorted).
    agg::AggregationAccumulator<S> acc(gm);
    for (std::size_t i = 0; i < active.size(); ++i) {
      std::optional<std::set<std::int32_t>> mask;
      if (cfg.masked_loss) mask = partition.label_sets[active[i]];
      acc.accumulate(std::span<const std::pair<std::string, TensorT<S>>>(outcomes[i].params),
                     level_slices[levels[i]], mask);
    }
    acc.commit(gm);

    RoundRecord record;
    record.round = gm.round;
    record.lr = lr;
    record.active_clients = active;
    for (std::size_t i = 0; i < active.size(); ++i) {
      record.level_counts[cfg.levels[levels[i]].label] += 1;
    }
    double loss_sum = 0.0;
    for (const auto& o : outcomes) loss_sum += o.mean_loss;
    record.train_loss = loss_sum / static_cast<double>(outcomes.size());

    const bool final_round = (t == cfg.rounds);
    if (final_round) {
      gm.sbn_stats = compute_sbn_stats(cfg, spec, serving, gm, train, partition);
      result.global_accuracy =
          evaluate_global(gm, spec, serving, test, cfg.stats_batch, cfg.threads);
      record.global_accuracy = result.global_accuracy;
      if (local_test) {
        const LocalEvalResult local =
            evaluate_local(gm, spec, serving, test, *local_test, cfg.stats_batch, cfg.threads);
        result.local_accuracy = local.accuracy;
        result.empty_eval_shards_skipped = local.skipped_shards;
        record.local_accuracy = local.accuracy;
      }
    } else if (cfg.eval_every > 0 && t % cfg.eval_every == 0) {
      agg::GlobalModelT<S> snapshot = gm;
      snapshot.sbn_stats = compute_sbn_stats(cfg, spec, serving, snapshot, train, partition);
      record.global_accuracy =
          evaluate_global(snapshot, spec, serving, test, cfg.stats_batch, cfg.threads);
      if (local_test) {
        record.local_accuracy =
            evaluate_local(snapshot, spec, serving, test, *local_test, cfg.stats_batch,
                           cfg.threads)
                .accuracy;
      }
    }

    record.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - round_start).count();
    result.rounds.push_back(record);
    if (on_round) on_round(record);
  }

  if (cfg.rounds == 0) {
    gm.sbn_stats = compute_sbn_stats(cfg, spec, serving, gm, train, partition);
    result.global_accuracy =
        evaluate_global(gm, spec, serving, test, cfg.stats_batch, cfg.threads);
    if (local_test) {
      const LocalEvalResult local =
          evaluate_local(gm, spec, serving, test, *local_test, cfg.stats_batch, cfg.threads);
      result.local_accuracy = local.accuracy;
      result.empty_eval_shards_skipped = local.skipped_shards;
    }
  }
  return result;
}

template <class S>
std::vector<SweepRow> interpolation_sweep(const FederationConfig& cfg, const zoo::ModelSpec& spec,
                                          const data::DatasetT<S>& train,
                                          const data::DatasetT<S>& test,
                                          const data::Partition& partition,
                                          const data::Partition* local_test, char anchor,
                                          char minor, std::uint32_t steps,
                                          const std::function<void(const SweepRow&)>& on_row) {
  if (steps == 0) throw std::invalid_argument("interpolation_sweep: steps must be >= 1");
  if (anchor == minor) throw std::invalid_argument("interpolation_sweep: levels must differ");
  const zoo::LevelSpec* anchor_level = nullptr;
  const zoo::LevelSpec* minor_level = nullptr;
  for (const auto& l : cfg.levels) {
    if (l.label == anchor) anchor_level = &l;
    if (l.label == minor) minor_level = &l;
  }
  if (!anchor_level || !minor_level) {
    throw std::invalid_argument("interpolation_sweep: anchor/minor must name configured levels");
  }

  std::vector<SweepRow> rows;
  for (std::uint32_t k = 1; k <= steps; ++k) {
    const double prop = static_cast<double>(k) / static_cast<double>(steps);
    FederationConfig step_cfg = cfg;
    step_cfg.assignment = Assignment::fix;
    step_cfg.levels = {*anchor_level, *minor_level};
    step_cfg.fix_proportions = {{anchor, prop}, {minor, 1.0 - prop}};

    RunResult<S> rr = run(step_cfg, spec, train, test, partition, local_test);
    SweepRow row;
    row.proportion = prop;
    row.avg_params =
        zoo::average_params(spec, {*anchor_level, *minor_level}, {prop, 1.0 - prop});
    row.global_accuracy = rr.global_accuracy;
    row.local_accuracy = rr.local_accuracy;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

#define HETEROFL_FED_INSTANTIATE(S)                                                           \
  template RunResult<S> run(const FederationConfig&, const zoo::ModelSpec&,                   \
                            const data::DatasetT<S>&, const data::DatasetT<S>&,               \
                            const data::Partition&, const data::Partition*,                   \
                            const RoundCallback&);                                            \
  template double evaluate_global(const agg::GlobalModelT<S>&, const zoo::ModelSpec&,         \
                                  const zoo::LevelSpec&, const data::DatasetT<S>&,            \
                                  std::size_t, unsigned);                                     \
  template LocalEvalResult evaluate_local(const agg::GlobalModelT<S>&, const zoo::ModelSpec&, \
                                          const zoo::LevelSpec&, const data::DatasetT<S>&,    \
                                          const data::Partition&, std::size_t, unsigned);     \
  template std::vector<SweepRow> interpolation_sweep(                                         \
      const FederationConfig&, const zoo::ModelSpec&, const data::DatasetT<S>&,               \
      const data::DatasetT<S>&, const data::Partition&, const data::Partition*, char, char,   \
      std::uint32_t, const std::function<void(const SweepRow&)>&);

HETEROFL_FED_INSTANTIATE(float)
HETEROFL_FED_INSTANTIATE(double)
#undef HETEROFL_FED_INSTANTIATE

}  // namespace heterofl::fed
