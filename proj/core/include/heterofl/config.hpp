#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "heterofl/data.hpp"
#include "heterofl/federation.hpp"
#include "heterofl/model_zoo.hpp"

namespace heterofl::cli {

enum class Precision { f32, f64 };

inline std::size_t bytes_per_value(Precision p) { return p == Precision::f32 ? 4 : 8; }

struct DatasetConfig {
  enum class Kind { synthetic, mnist } kind = Kind::synthetic;

  data::SyntheticSpec synthetic;

  // mnist: directory holding the standard IDX file names, or explicit paths.
  std::string dir;
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t image_rows = 28, image_cols = 28;
  std::int32_t num_classes = 10;
  data::Normalization normalization;
  std::size_t train_limit = 0;  // 0 = all; otherwise keep the first N examples
  std::size_t test_limit = 0;
};

enum class PartitionMode { iid, noniid2 };

/// One experiment, fully described: a saved config re-runs to an identical
/// result given the same seed.
struct ExperimentConfig {
  Precision precision = Precision::f32;
  std::string out_dir = "runs/out";

  DatasetConfig dataset;

  zoo::Architecture arch = zoo::Architecture::cnn;
  std::vector<std::size_t> hidden = {64, 128, 256, 512};

  PartitionMode partition = PartitionMode::iid;

  double level_shrink = 0.5;
  int level_count = 5;
  std::string level_use;  // optional subset of labels, e.g. "ae" or "e"

  fed::FederationConfig federation;  // levels filled from level_shrink/count
};

/// Configuration problem, pointing at the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

ExperimentConfig parse_config_text(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& cfg);

/// Per-example input shape implied by the dataset section ({1,28,28} for
/// mnist, {features} for synthetic).
std::vector<std::size_t> input_shape_of(const DatasetConfig& ds);

/// The model spec the experiment trains (input shape + classes resolved).
zoo::ModelSpec model_spec_of(const ExperimentConfig& cfg);

}  // namespace heterofl::cli
