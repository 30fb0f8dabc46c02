#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "heterofl/experiment.hpp"

namespace {

using heterofl::cli::ConfigError;
using heterofl::cli::ExperimentConfig;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOpts {
  std::string config_path;
  std::string out_override;
  std::int64_t seed_override = -1;
  std::int64_t eval_every_override = -1;
  std::int64_t threads_override = -1;
};

void add_common(CLI::App* cmd, CommonOpts* opts) {
  cmd->add_option("--config", opts->config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", opts->out_override, "override the output directory");
  cmd->add_option("--seed", opts->seed_override, "override the federation seed");
  cmd->add_option("--eval-every", opts->eval_every_override,
                  "override the evaluation cadence (rounds; 0 = final only)");
  cmd->add_option("--threads", opts->threads_override,
                  "override the worker thread count (0 = hardware)");
}

ExperimentConfig load(const CommonOpts& opts) {
  ExperimentConfig cfg = heterofl::cli::load_config(opts.config_path);
  if (!opts.out_override.empty()) cfg.out_dir = opts.out_override;
  if (opts.seed_override >= 0) cfg.federation.seed = static_cast<std::uint64_t>(opts.seed_override);
  if (opts.eval_every_override >= 0) {
    cfg.federation.eval_every = static_cast<std::uint32_t>(opts.eval_every_override);
  }
  if (opts.threads_override >= 0) {
    cfg.federation.threads = static_cast<unsigned>(opts.threads_override);
  }
  return cfg;
}

json round_to_json(const heterofl::fed::RoundRecord& r) {
  json j;
  j["round"] = r.round;
  j["lr"] = r.lr;
  json counts;
  for (const auto& [label, n] : r.level_counts) counts[std::string(1, label)] = n;
  j["level_counts"] = counts;
  j["train_loss"] = r.train_loss;
  if (r.global_accuracy) j["global_acc"] = *r.global_accuracy;
  if (r.local_accuracy) j["local_acc"] = *r.local_accuracy;
  return j;
}

int cmd_run(const CommonOpts& opts) {
  const ExperimentConfig cfg = load(opts);
  std::filesystem::create_directories(cfg.out_dir);
  const std::string metrics_path = cfg.out_dir + "/metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot open " + metrics_path + " for writing");

  auto summary = heterofl::cli::run_experiment(
      cfg,
      [&](const heterofl::fed::RoundRecord& r) {
        metrics << round_to_json(r).dump() << "\n";
        metrics.flush();
      },
      cfg.out_dir + "/checkpoint.bin");

  // Final summary record: everything deterministic given (config, seed).
  json tail;
  tail["rounds"] = summary.rounds;
  tail["global_acc"] = summary.global_accuracy;
  if (summary.local_accuracy) tail["local_acc"] = *summary.local_accuracy;
  tail["global_params"] = summary.global_params;
  tail["avg_params"] = summary.avg_params;
  metrics << tail.dump() << "\n";
  metrics.close();

  json sj = tail;
  sj["wall_seconds"] = summary.wall_seconds;
  sj["skipped_eval_shards"] = summary.skipped_eval_shards;
  sj["config"] = json::parse(heterofl::cli::serialize_config(cfg));
  std::ofstream(cfg.out_dir + "/summary.json") << sj.dump(2) << "\n";

  std::cout << "run complete: global_acc=" << summary.global_accuracy;
  if (summary.local_accuracy) std::cout << " local_acc=" << *summary.local_accuracy;
  std::cout << " (" << summary.wall_seconds << "s)\n";
  return kExitOk;
}

int cmd_info(const CommonOpts& opts, const std::string& combos_arg) {
  const ExperimentConfig cfg = load(opts);
  std::vector<std::string> combos;
  if (cfg.federation.levels.size() > 1) {
    std::string all;
    for (const auto& l : cfg.federation.levels) {
      if (!all.empty()) all += '-';
      all += l.label;
    }
    combos.push_back(all);
  }
  std::stringstream extra(combos_arg);
  for (std::string item; std::getline(extra, item, ',');) {
    if (!item.empty()) combos.push_back(item);
  }

  const auto rows = heterofl::cli::model_info(cfg, combos);
  std::printf("%-12s %8s %14s %16s %12s\n", "model", "ratio", "params", "flops", "space(MB)");
  for (const auto& r : rows) {
    std::printf("%-12s %8.2f %14llu %16llu %12.2f\n", r.name.c_str(), r.ratio,
                static_cast<unsigned long long>(r.params),
                static_cast<unsigned long long>(r.flops), r.megabytes);
  }
  return kExitOk;
}

int cmd_sweep(const CommonOpts& opts, const std::string& anchor, const std::string& minor,
              unsigned steps) {
  if (anchor.size() != 1 || minor.size() != 1) {
    throw ConfigError("sweep", "--anchor/--minor take single level labels");
  }
  const ExperimentConfig cfg = load(opts);
  std::filesystem::create_directories(cfg.out_dir);
  const std::string csv_path = cfg.out_dir + "/sweep.csv";
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");

  const bool with_local = cfg.partition == heterofl::cli::PartitionMode::noniid2;
  csv << "proportion,avg_params,global_acc" << (with_local ? ",local_acc" : "") << "\n";
  heterofl::cli::run_sweep(cfg, anchor[0], minor[0], steps,
                           [&](const heterofl::fed::SweepRow& row) {
                             csv << row.proportion << "," << row.avg_params << ","
                                 << row.global_accuracy;
                             if (with_local && row.local_accuracy) csv << "," << *row.local_accuracy;
                             csv << "\n";
                             csv.flush();
                             std::cout << "sweep " << row.proportion
                                       << ": avg_params=" << row.avg_params
                                       << " global_acc=" << row.global_accuracy << "\n";
                           });
  std::cout << "wrote " << csv_path << "\n";
  return kExitOk;
}

int cmd_eval(const CommonOpts& opts, const std::string& checkpoint) {
  const ExperimentConfig cfg = load(opts);
  const auto result = heterofl::cli::evaluate_checkpoint(cfg, checkpoint);
  json j;
  j["round"] = result.round;
  j["global_acc"] = result.global_accuracy;
  if (result.local_accuracy) j["local_acc"] = *result.local_accuracy;
  std::cout << j.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HeteroFL federated-learning simulator"};
  app.require_subcommand(1);

  CommonOpts run_opts, info_opts, sweep_opts, eval_opts;
  std::string combos_arg, anchor = "a", minor, checkpoint;
  unsigned steps = 10;

  CLI::App* run_cmd = app.add_subcommand("run", "run an experiment from a config");
  add_common(run_cmd, &run_opts);

  CLI::App* info_cmd = app.add_subcommand("info", "print per-level parameter/FLOP accounting");
  add_common(info_cmd, &info_opts);
  info_cmd->add_option("--combos", combos_arg, "extra combinations, e.g. a-e,b-c-d-e");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "fix-mode proportion interpolation sweep");
  add_common(sweep_cmd, &sweep_opts);
  sweep_cmd->add_option("--anchor", anchor, "anchor level label")->required();
  sweep_cmd->add_option("--minor", minor, "minor level label")->required();
  sweep_cmd->add_option("--steps", steps, "number of proportion steps (default 10)");

  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a saved checkpoint");
  add_common(eval_cmd, &eval_opts);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run_cmd->parsed()) return cmd_run(run_opts);
    if (info_cmd->parsed()) return cmd_info(info_opts, combos_arg);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_opts, anchor, minor, steps);
    if (eval_cmd->parsed()) return cmd_eval(eval_opts, checkpoint);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
