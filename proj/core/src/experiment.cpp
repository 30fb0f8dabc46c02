#include "heterofl/experiment.hpp"

#include <chrono>
#include <filesystem>

namespace heterofl::cli {

namespace {

std::string idx_path(const DatasetConfig& ds, const std::string& explicit_path,
                     const char* standard_name) {
  if (!explicit_path.empty()) return explicit_path;
  return (std::filesystem::path(ds.dir) / standard_name).string();
}

template <class S>
struct Prepared {
  data::DatasetT<S> train;
  data::DatasetT<S> test;
  data::Partition train_parts;
  std::optional<data::Partition> local_test;
  zoo::ModelSpec spec;
};

template <class S>
Prepared<S> prepare(const ExperimentConfig& cfg) {
  Prepared<S> out;
  const auto& ds = cfg.dataset;
  if (ds.kind == DatasetConfig::Kind::synthetic) {
    auto both = data::make_synthetic<S>(ds.synthetic);
    out.train = std::move(both.train);
    out.test = std::move(both.test);
  } else {
    out.train = data::load_idx<S>(idx_path(ds, ds.train_images, "train-images-idx3-ubyte"),
                                  idx_path(ds, ds.train_labels, "train-labels-idx1-ubyte"),
                                  ds.num_classes, ds.normalization);
    out.test = data::load_idx<S>(idx_path(ds, ds.test_images, "t10k-images-idx3-ubyte"),
                                 idx_path(ds, ds.test_labels, "t10k-labels-idx1-ubyte"),
                                 ds.num_classes, ds.normalization);
    if (ds.train_limit) out.train.truncate(ds.train_limit);
    if (ds.test_limit) out.test.truncate(ds.test_limit);
  }

  out.spec = model_spec_of(cfg);
  if (out.train.example_shape() != out.spec.input_shape) {
    throw std::runtime_error("dataset example shape does not match the configured input shape");
  }

  const auto& f = cfg.federation;
  if (cfg.partition == PartitionMode::iid) {
    out.train_parts = data::partition_iid(std::span<const std::int32_t>(out.train.labels),
                                          f.clients, Rng::stream(f.seed, "partition-iid"));
  } else {
    auto split = data::partition_noniid_2class(std::span<const std::int32_t>(out.train.labels),
                                               std::span<const std::int32_t>(out.test.labels),
                                               out.train.num_classes, f.clients,
                                               Rng::stream(f.seed, "partition-noniid"));
    out.train_parts = std::move(split.train);
    out.local_test = std::move(split.test);
  }
  return out;
}

template <class S>
ExperimentSummary run_typed(const ExperimentConfig& cfg, const fed::RoundCallback& on_round,
                            const std::string& checkpoint_path) {
  const auto start = std::chrono::steady_clock::now();
  Prepared<S> prep = prepare<S>(cfg);
  const data::Partition* local = prep.local_test ? &*prep.local_test : nullptr;
  fed::RunResult<S> rr =
      fed::run(cfg.federation, prep.spec, prep.train, prep.test, prep.train_parts, local, on_round);

  if (!checkpoint_path.empty()) agg::save_checkpoint(checkpoint_path, rr.global);

  ExperimentSummary summary;
  summary.rounds = cfg.federation.rounds;
  summary.global_accuracy = rr.global_accuracy;
  summary.local_accuracy = rr.local_accuracy;
  summary.skipped_eval_shards = rr.empty_eval_shards_skipped;
  summary.global_params =
      zoo::count_params(prep.spec, fed::serving_level(cfg.federation));
  const std::size_t n_levels = cfg.federation.levels.size();
  summary.avg_params = zoo::average_params(
      prep.spec, cfg.federation.levels,
      std::vector<double>(n_levels, 1.0 / static_cast<double>(n_levels)));
  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return summary;
}

template <class S>
EvalResultOut eval_typed(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  Prepared<S> prep = prepare<S>(cfg);
  agg::GlobalModelT<S> gm = agg::load_checkpoint<S>(checkpoint_path);
  const zoo::LevelSpec serving = fed::serving_level(cfg.federation);

  EvalResultOut out;
  out.round = gm.round;
  out.global_accuracy =
      fed::evaluate_global(gm, prep.spec, serving, prep.test, cfg.federation.stats_batch);
  if (prep.local_test) {
    out.local_accuracy = fed::evaluate_local(gm, prep.spec, serving, prep.test, *prep.local_test,
                                             cfg.federation.stats_batch)
                             .accuracy;
  }
  return out;
}

template <class S>
std::vector<fed::SweepRow> sweep_typed(const ExperimentConfig& cfg, char anchor, char minor,
                                       std::uint32_t steps,
                                       const std::function<void(const fed::SweepRow&)>& on_row) {
  Prepared<S> prep = prepare<S>(cfg);
  const data::Partition* local = prep.local_test ? &*prep.local_test : nullptr;
  return fed::interpolation_sweep(cfg.federation, prep.spec, prep.train, prep.test,
                                  prep.train_parts, local, anchor, minor, steps, on_row);
}

}  // namespace

ExperimentSummary run_experiment(const ExperimentConfig& cfg, const fed::RoundCallback& on_round,
                                 const std::string& checkpoint_path) {
  return cfg.precision == Precision::f32 ? run_typed<float>(cfg, on_round, checkpoint_path)
                                         : run_typed<double>(cfg, on_round, checkpoint_path);
}

EvalResultOut evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& checkpoint_path) {
  const agg::ScalarKind kind = agg::checkpoint_scalar_kind(checkpoint_path);
  return kind == agg::ScalarKind::f32 ? eval_typed<float>(cfg, checkpoint_path)
                                      : eval_typed<double>(cfg, checkpoint_path);
}

std::vector<fed::SweepRow> run_sweep(const ExperimentConfig& cfg, char anchor, char minor,
                                     std::uint32_t steps,
                                     const std::function<void(const fed::SweepRow&)>& on_row) {
  return cfg.precision == Precision::f32 ? sweep_typed<float>(cfg, anchor, minor, steps, on_row)
                                         : sweep_typed<double>(cfg, anchor, minor, steps, on_row);
}

std::vector<InfoRow> model_info(const ExperimentConfig& cfg,
                                const std::vector<std::string>& combos) {
  const zoo::ModelSpec spec = model_spec_of(cfg);
  const auto& levels = cfg.federation.levels;
  const double bytes = static_cast<double>(bytes_per_value(cfg.precision));
  const auto base_params = static_cast<double>(zoo::count_params(spec, levels.front()));

  auto find_level = [&](char label) -> const zoo::LevelSpec& {
    for (const auto& l : levels)
      if (l.label == label) return l;
    throw ConfigError("levels", std::string("unknown level label '") + label + "'");
  };

  std::vector<InfoRow> rows;
  for (const auto& l : levels) {
    InfoRow row;
    row.name = std::string(1, l.label);
    row.params = zoo::count_params(spec, l);
    row.flops = zoo::count_flops(spec, l);
    row.ratio = static_cast<double>(row.params) / base_params;
    row.megabytes = static_cast<double>(row.params) * bytes / (1024.0 * 1024.0);
    rows.push_back(row);
  }
  for (const auto& combo : combos) {
    InfoRow row;
    row.name = combo;
    double params = 0.0, flops = 0.0;
    std::size_t members = 0;
    for (char label : combo) {
      if (label == '-') continue;
      const auto& l = find_level(label);
      params += static_cast<double>(zoo::count_params(spec, l));
      flops += static_cast<double>(zoo::count_flops(spec, l));
      ++members;
    }
    if (members == 0) throw ConfigError("combos", "empty combination \"" + combo + "\"");
    params /= static_cast<double>(members);
    flops /= static_cast<double>(members);
    row.params = static_cast<std::uint64_t>(params + 0.5);
    row.flops = static_cast<std::uint64_t>(flops + 0.5);
    row.ratio = params / base_params;
    row.megabytes = params * bytes / (1024.0 * 1024.0);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace heterofl::cli
