#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heterofl/data.hpp"
#include "heterofl/hetero.hpp"
#include "heterofl/model_zoo.hpp"

namespace heterofl::fed {

enum class Assignment { fix, dynamic };

struct FederationConfig {
  std::uint32_t clients = 100;
  double active_fraction = 0.1;  // C
  std::uint32_t local_epochs = 5;
  std::uint32_t batch_size = 10;

  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::optional<double> clip_norm = 1.0;

  std::uint32_t rounds = 200;
  std::vector<std::uint32_t> decay_milestones;  // lr *= decay_factor after each
  double decay_factor = 0.1;

  std::vector<zoo::LevelSpec> levels;  // must contain at least one level
  Assignment assignment = Assignment::dynamic;
  std::map<char, double> fix_proportions;  // by level label; must sum to 1 in fix mode

  bool masked_loss = false;  // enabled with the balanced non-IID partition
  std::uint64_t seed = 31;
  unsigned threads = 0;  // 0 = hardware concurrency
  std::uint32_t eval_every = 0;  // 0 = evaluate only after the final round
  std::uint32_t stats_batch = 256;  // batch size of finalization/evaluation passes
};

struct RoundRecord {
  std::uint64_t round = 0;  // 1-based, value after the commit
  double lr = 0.0;
  std::vector<std::uint32_t> active_clients;  // ascending ids
  std::map<char, std::uint32_t> level_counts;
  double train_loss = 0.0;  // mean over active clients of their mean batch loss
  std::optional<double> global_accuracy;
  std::optional<double> local_accuracy;
  double wall_seconds = 0.0;  // not part of the serialized metrics record
};

template <class S>
struct RunResult {
  agg::GlobalModelT<S> global;
  std::vector<RoundRecord> rounds;
  double global_accuracy = 0.0;
  std::optional<double> local_accuracy;
  std::uint32_t empty_eval_shards_skipped = 0;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

/// Effective learning rate for 1-based round t under the milestone schedule.
double lr_at_round(const FederationConfig& cfg, std::uint32_t round);

/// Active-set size per round: max(C*M, 1), C*M rounded to nearest.
std::uint32_t active_count(const FederationConfig& cfg);

/// The level the global inference model is served at: the configured level
/// with the smallest p (the widest subnetwork anyone trains).
const zoo::LevelSpec& serving_level(const FederationConfig& cfg);

/// Runs the full protocol: per round, sample the active set, resolve each
/// client's complexity level, train the extracted subnetwork locally and
/// aggregate by coverage-counted averaging; decay the learning rate at the
/// milestones; after the final round, finalize sBN statistics over every
/// client's training data and evaluate. Deterministic in (config, data,
/// seed) regardless of thread count.
template <class S>
RunResult<S> run(const FederationConfig& cfg, const zoo::ModelSpec& spec,
                 const data::DatasetT<S>& train, const data::DatasetT<S>& test,
                 const data::Partition& partition, const data::Partition* local_test,
                 const RoundCallback& on_round = {});

/// Top-1 accuracy of the finalized global model over the full test set.
template <class S>
double evaluate_global(const agg::GlobalModelT<S>& gm, const zoo::ModelSpec& spec,
                       const zoo::LevelSpec& serving, const data::DatasetT<S>& test,
                       std::size_t batch_size, unsigned threads = 1);

struct LocalEvalResult {
  double accuracy = 0.0;              // example-weighted over all clients
  std::uint32_t skipped_shards = 0;   // clients with empty local test data
};

/// Restricted-argmax evaluation: each client predicts only within its own
/// label set; accuracy is averaged over examples across all clients.
template <class S>
LocalEvalResult evaluate_local(const agg::GlobalModelT<S>& gm, const zoo::ModelSpec& spec,
                               const zoo::LevelSpec& serving, const data::DatasetT<S>& test,
                               const data::Partition& local_test, std::size_t batch_size,
                               unsigned threads = 1);

struct SweepRow {
  double proportion = 0.0;   // fraction of clients on the anchor level
  double avg_params = 0.0;
  double global_accuracy = 0.0;
  std::optional<double> local_accuracy;
};

/// Fix-mode proportion sweep between two levels: step k of `steps` assigns
/// k/steps of the clients to `anchor` and the rest to `minor`, runs the full
/// experiment and reports (average parameters, accuracy).
template <class S>
std::vector<SweepRow> interpolation_sweep(const FederationConfig& cfg, const zoo::ModelSpec& spec,
                                          const data::DatasetT<S>& train,
                                          const data::DatasetT<S>& test,
                                          const data::Partition& partition,
                                          const data::Partition* local_test, char anchor,
                                          char minor, std::uint32_t steps,
                                          const std::function<void(const SweepRow&)>& on_row = {});

}  // namespace heterofl::fed
