#include "heterofl/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace heterofl::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& message) {
  throw ConfigError(field, message);
}

const json* maybe(const json& j, const std::string& key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

template <class T>
T get_required(const json& j, const std::string& path, const std::string& key) {
  const json* v = maybe(j, key);
  if (!v) fail(path + "." + key, "missing required field");
  try {
    return v->get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

template <class T>
T get_or(const json& j, const std::string& path, const std::string& key, T fallback) {
  const json* v = maybe(j, key);
  if (!v) return fallback;
  try {
    return v->get<T>();
  } catch (const json::exception&) {
    fail(path + "." + key, "wrong type");
  }
}

DatasetConfig parse_dataset(const json& j) {
  DatasetConfig ds;
  const std::string kind = get_required<std::string>(j, "dataset", "kind");
  if (kind == "synthetic") {
    ds.kind = DatasetConfig::Kind::synthetic;
    auto& s = ds.synthetic;
    s.train_examples = get_or<std::size_t>(j, "dataset", "train_examples", s.train_examples);
    s.test_examples = get_or<std::size_t>(j, "dataset", "test_examples", s.test_examples);
    s.features = get_or<std::size_t>(j, "dataset", "features", s.features);
    s.classes = get_or<std::int32_t>(j, "dataset", "classes", s.classes);
    s.blobs_per_class = get_or<std::int32_t>(j, "dataset", "blobs_per_class", s.blobs_per_class);
    s.center_spread = get_or<double>(j, "dataset", "center_spread", s.center_spread);
    s.noise = get_or<double>(j, "dataset", "noise", s.noise);
    s.seed = get_or<std::uint64_t>(j, "dataset", "seed", s.seed);
    ds.num_classes = s.classes;
  } else if (kind == "mnist") {
    ds.kind = DatasetConfig::Kind::mnist;
    ds.dir = get_or<std::string>(j, "dataset", "dir", "");
    ds.train_images = get_or<std::string>(j, "dataset", "train_images", "");
    ds.train_labels = get_or<std::string>(j, "dataset", "train_labels", "");
    ds.test_images = get_or<std::string>(j, "dataset", "test_images", "");
    ds.test_labels = get_or<std::string>(j, "dataset", "test_labels", "");
    if (ds.dir.empty() && ds.train_images.empty()) {
      fail("dataset.dir", "missing required field (or give explicit file paths)");
    }
    ds.num_classes = get_or<std::int32_t>(j, "dataset", "num_classes", 10);
    ds.image_rows = get_or<std::size_t>(j, "dataset", "image_rows", 28);
    ds.image_cols = get_or<std::size_t>(j, "dataset", "image_cols", 28);
    ds.normalization.mean = get_or<double>(j, "dataset", "normalize_mean", 0.1307);
    ds.normalization.stddev = get_or<double>(j, "dataset", "normalize_std", 0.3081);
    ds.train_limit = get_or<std::size_t>(j, "dataset", "train_limit", 0);
    ds.test_limit = get_or<std::size_t>(j, "dataset", "test_limit", 0);
  } else {
    fail("dataset.kind", "expected \"synthetic\" or \"mnist\", got \"" + kind + "\"");
  }
  return ds;
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& err) {
    fail("<config>", std::string("invalid JSON: ") + err.what());
  }

  ExperimentConfig cfg;

  const std::string precision = get_or<std::string>(j, "", "precision", "f32");
  if (precision == "f32") {
    cfg.precision = Precision::f32;
  } else if (precision == "f64") {
    cfg.precision = Precision::f64;
  } else {
    fail("precision", "expected \"f32\" or \"f64\"");
  }
  cfg.out_dir = get_or<std::string>(j, "", "out_dir", cfg.out_dir);

  const json* dataset = maybe(j, "dataset");
  if (!dataset) fail("dataset", "missing required field");
  cfg.dataset = parse_dataset(*dataset);

  if (const json* model = maybe(j, "model")) {
    const std::string arch = get_or<std::string>(*model, "model", "arch", "cnn");
    if (arch == "cnn") {
      cfg.arch = zoo::Architecture::cnn;
    } else if (arch == "mlp") {
      cfg.arch = zoo::Architecture::mlp;
    } else {
      fail("model.arch", "expected \"cnn\" or \"mlp\"");
    }
    cfg.hidden = get_or<std::vector<std::size_t>>(*model, "model", "hidden", cfg.hidden);
    if (cfg.hidden.empty()) fail("model.hidden", "must list at least one width");
  }
  if (cfg.dataset.kind == DatasetConfig::Kind::synthetic && cfg.arch == zoo::Architecture::cnn) {
    fail("model.arch", "the synthetic dataset is flat; use \"mlp\"");
  }

  const std::string part = get_or<std::string>(j, "", "partition", "iid");
  if (part == "iid") {
    cfg.partition = PartitionMode::iid;
  } else if (part == "noniid2") {
    cfg.partition = PartitionMode::noniid2;
  } else {
    fail("partition", "expected \"iid\" or \"noniid2\"");
  }

  if (const json* levels = maybe(j, "levels")) {
    cfg.level_shrink = get_or<double>(*levels, "levels", "shrink", cfg.level_shrink);
    cfg.level_count = get_or<int>(*levels, "levels", "count", cfg.level_count);
    cfg.level_use = get_or<std::string>(*levels, "levels", "use", "");
  }
  if (!(cfg.level_shrink > 0.0) || cfg.level_shrink > 1.0) {
    fail("levels.shrink", "must lie in (0, 1]");
  }
  if (cfg.level_count < 1 || cfg.level_count > 26) fail("levels.count", "must lie in [1, 26]");

  auto& f = cfg.federation;
  if (const json* fed = maybe(j, "federation")) {
    const std::string p = "federation";
    f.clients = get_or<std::uint32_t>(*fed, p, "clients", f.clients);
    f.active_fraction = get_or<double>(*fed, p, "active_fraction", f.active_fraction);
    f.local_epochs = get_or<std::uint32_t>(*fed, p, "local_epochs", f.local_epochs);
    f.batch_size = get_or<std::uint32_t>(*fed, p, "batch_size", f.batch_size);
    f.lr = get_or<double>(*fed, p, "lr", f.lr);
    f.momentum = get_or<double>(*fed, p, "momentum", f.momentum);
    f.weight_decay = get_or<double>(*fed, p, "weight_decay", f.weight_decay);
    const double clip = get_or<double>(*fed, p, "clip_norm", f.clip_norm ? *f.clip_norm : 0.0);
    f.clip_norm = clip > 0.0 ? std::optional<double>(clip) : std::nullopt;
    f.rounds = get_or<std::uint32_t>(*fed, p, "rounds", f.rounds);
    f.decay_milestones =
        get_or<std::vector<std::uint32_t>>(*fed, p, "decay_milestones", f.decay_milestones);
    f.decay_factor = get_or<double>(*fed, p, "decay_factor", f.decay_factor);
    const std::string mode = get_or<std::string>(*fed, p, "assignment", "dynamic");
    if (mode == "dynamic") {
      f.assignment = fed::Assignment::dynamic;
    } else if (mode == "fix") {
      f.assignment = fed::Assignment::fix;
    } else {
      fail("federation.assignment", "expected \"fix\" or \"dynamic\"");
    }
    if (const json* props = maybe(*fed, "fix_proportions")) {
      if (!props->is_object()) fail("federation.fix_proportions", "expected an object");
      for (auto it = props->begin(); it != props->end(); ++it) {
        if (it.key().size() != 1) {
          fail("federation.fix_proportions", "keys must be single level labels");
        }
        f.fix_proportions[it.key()[0]] = it.value().get<double>();
      }
    }
    f.seed = get_or<std::uint64_t>(*fed, p, "seed", f.seed);
    f.threads = get_or<unsigned>(*fed, p, "threads", f.threads);
    f.eval_every = get_or<std::uint32_t>(*fed, p, "eval_every", f.eval_every);
    f.stats_batch = get_or<std::uint32_t>(*fed, p, "stats_batch", f.stats_batch);
  }
  f.levels = zoo::make_levels(cfg.level_shrink, cfg.level_count);
  if (!cfg.level_use.empty()) {
    std::vector<zoo::LevelSpec> subset;
    for (char label : cfg.level_use) {
      bool found = false;
      for (const auto& l : f.levels) {
        if (l.label == label) {
          subset.push_back(l);
          found = true;
          break;
        }
      }
      if (!found) fail("levels.use", std::string("unknown level label '") + label + "'");
    }
    f.levels = std::move(subset);
  }
  f.masked_loss = (cfg.partition == PartitionMode::noniid2);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail("<config>", "cannot open " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["precision"] = cfg.precision == Precision::f32 ? "f32" : "f64";
  j["out_dir"] = cfg.out_dir;

  json ds;
  if (cfg.dataset.kind == DatasetConfig::Kind::synthetic) {
    const auto& s = cfg.dataset.synthetic;
    ds["kind"] = "synthetic";
    ds["train_examples"] = s.train_examples;
    ds["test_examples"] = s.test_examples;
    ds["features"] = s.features;
    ds["classes"] = s.classes;
    ds["blobs_per_class"] = s.blobs_per_class;
    ds["center_spread"] = s.center_spread;
    ds["noise"] = s.noise;
    ds["seed"] = s.seed;
  } else {
    ds["kind"] = "mnist";
    if (!cfg.dataset.dir.empty()) ds["dir"] = cfg.dataset.dir;
    if (!cfg.dataset.train_images.empty()) ds["train_images"] = cfg.dataset.train_images;
    if (!cfg.dataset.train_labels.empty()) ds["train_labels"] = cfg.dataset.train_labels;
    if (!cfg.dataset.test_images.empty()) ds["test_images"] = cfg.dataset.test_images;
    if (!cfg.dataset.test_labels.empty()) ds["test_labels"] = cfg.dataset.test_labels;
    ds["num_classes"] = cfg.dataset.num_classes;
    ds["image_rows"] = cfg.dataset.image_rows;
    ds["image_cols"] = cfg.dataset.image_cols;
    ds["normalize_mean"] = cfg.dataset.normalization.mean;
    ds["normalize_std"] = cfg.dataset.normalization.stddev;
    ds["train_limit"] = cfg.dataset.train_limit;
    ds["test_limit"] = cfg.dataset.test_limit;
  }
  j["dataset"] = ds;

  j["model"] = {{"arch", cfg.arch == zoo::Architecture::cnn ? "cnn" : "mlp"},
                {"hidden", cfg.hidden}};
  j["partition"] = cfg.partition == PartitionMode::iid ? "iid" : "noniid2";
  j["levels"] = {{"shrink", cfg.level_shrink}, {"count", cfg.level_count}};
  if (!cfg.level_use.empty()) j["levels"]["use"] = cfg.level_use;

  const auto& f = cfg.federation;
  json fed;
  fed["clients"] = f.clients;
  fed["active_fraction"] = f.active_fraction;
  fed["local_epochs"] = f.local_epochs;
  fed["batch_size"] = f.batch_size;
  fed["lr"] = f.lr;
  fed["momentum"] = f.momentum;
  fed["weight_decay"] = f.weight_decay;
  fed["clip_norm"] = f.clip_norm ? *f.clip_norm : 0.0;
  fed["rounds"] = f.rounds;
  fed["decay_milestones"] = f.decay_milestones;
  fed["decay_factor"] = f.decay_factor;
  fed["assignment"] = f.assignment == fed::Assignment::fix ? "fix" : "dynamic";
  if (!f.fix_proportions.empty()) {
    json props;
    for (const auto& [label, prop] : f.fix_proportions) props[std::string(1, label)] = prop;
    fed["fix_proportions"] = props;
  }
  fed["seed"] = f.seed;
  fed["threads"] = f.threads;
  fed["eval_every"] = f.eval_every;
  fed["stats_batch"] = f.stats_batch;
  j["federation"] = fed;

  return j.dump(2) + "\n";
}

std::vector<std::size_t> input_shape_of(const DatasetConfig& ds) {
  if (ds.kind == DatasetConfig::Kind::synthetic) return {ds.synthetic.features};
  return {1, ds.image_rows, ds.image_cols};
}

zoo::ModelSpec model_spec_of(const ExperimentConfig& cfg) {
  zoo::ModelSpec spec;
  spec.arch = cfg.arch;
  spec.base_hidden = cfg.hidden;
  spec.input_shape = input_shape_of(cfg.dataset);
  spec.num_classes = static_cast<std::size_t>(cfg.dataset.num_classes);
  return spec;
}

}  // namespace heterofl::cli
