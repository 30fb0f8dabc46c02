#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heterofl/config.hpp"
#include "heterofl/federation.hpp"

namespace heterofl::cli {

struct ExperimentSummary {
  std::uint64_t rounds = 0;
  double global_accuracy = 0.0;
  std::optional<double> local_accuracy;
  std::uint64_t global_params = 0;
  double avg_params = 0.0;  // uniform average over the configured levels
  std::uint32_t skipped_eval_shards = 0;
  double wall_seconds = 0.0;
};

/// Loads the dataset, partitions it, runs the federation and (optionally)
/// saves the final checkpoint. Dispatches on the configured precision.
ExperimentSummary run_experiment(const ExperimentConfig& cfg, const fed::RoundCallback& on_round,
                                 const std::string& checkpoint_path = "");

struct EvalResultOut {
  std::uint64_t round = 0;
  double global_accuracy = 0.0;
  std::optional<double> local_accuracy;
};

/// Evaluates a saved checkpoint against the config's test data (and, for
/// non-IID configs, the per-client local shards).
EvalResultOut evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path);

/// Proportion sweep between two level labels (see fed::interpolation_sweep).
std::vector<fed::SweepRow> run_sweep(const ExperimentConfig& cfg, char anchor, char minor,
                                     std::uint32_t steps,
                                     const std::function<void(const fed::SweepRow&)>& on_row = {});

struct InfoRow {
  std::string name;        // "a" or a combination like "a-e"
  double ratio = 0.0;      // parameters vs level 'a'
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double megabytes = 0.0;  // params * bytes per value / 2^20
};

/// Parameter/FLOP table per level plus any requested combinations
/// (combination metrics are the uniform average over member levels).
std::vector<InfoRow> model_info(const ExperimentConfig& cfg,
                                const std::vector<std::string>& combos);

}  // namespace heterofl::cli
