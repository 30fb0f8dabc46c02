#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "heterofl/nn/layers.hpp"
#include "heterofl/rng.hpp"

namespace heterofl::zoo {

/// One computation complexity level: level p trains the upper-left slice of
/// the global model with hidden widths scaled by shrink^(p-1).
struct LevelSpec {
  char label = 'a';
  int p = 1;            // 1 = full global model
  double shrink = 0.5;  // hidden channel shrinkage ratio r

  double width_factor() const { return std::pow(shrink, p - 1); }
  /// Parameter-volume ratio of an internal layer vs the global model.
  double model_shrink() const { return width_factor() * width_factor(); }

  friend bool operator==(const LevelSpec&, const LevelSpec&) = default;
};

/// Levels labeled 'a', 'b', ... with p = 1..count at a common shrink ratio.
std::vector<LevelSpec> make_levels(double shrink, int count);

enum class Architecture { cnn, mlp };

struct ModelSpec {
  Architecture arch = Architecture::cnn;
  std::vector<std::size_t> base_hidden;  // global (p=1) widths, one per block
  std::vector<std::size_t> input_shape;  // per example: {C,H,W} for cnn, {features...} for mlp
  std::size_t num_classes = 0;
};

/// ceil(width_factor * base); the single rounding rule used everywhere.
std::size_t scaled_width(std::size_t base, double width_factor);

/// Hidden widths of the level's subnetwork, one per block.
std::vector<std::size_t> level_widths(const ModelSpec& spec, const LevelSpec& level);

/// Ordered (name, shape) table of every trainable parameter at the given
/// level. Names are identical across levels; shapes are upper-left slices of
/// the p=1 shapes. First-layer input channels and classifier output rows
/// never shrink.
std::vector<std::pair<std::string, std::vector<std::size_t>>> param_shapes(
    const ModelSpec& spec, const LevelSpec& level);

/// Name of the final classification layer (its weight axis 0 indexes classes).
std::string classifier_name(const ModelSpec& spec);

/// Builds the level's model. Weights use fan-in-scaled normal init
/// (std = sqrt(2/fan_in)) when `init` is given, zeros otherwise; gamma=1,
/// beta=0 always. The Scaler factor is width_factor(serving)/width_factor(level),
/// i.e. 1/r^(p-1) when serving is the full model.
template <class S>
nn::Model<S> build_model(const ModelSpec& spec, const LevelSpec& level, Rng* init,
                         const LevelSpec* serving = nullptr);

/// Exact trainable-parameter count at the level.
std::uint64_t count_params(const ModelSpec& spec, const LevelSpec& level);

/// Forward FLOPs for one example: 2 x multiply-adds of conv/linear layers;
/// normalization, activations and pooling are not counted.
std::uint64_t count_flops(const ModelSpec& spec, const LevelSpec& level);

/// Proportion-weighted average parameter count; proportions must be
/// non-negative and sum to 1.
double average_params(const ModelSpec& spec, const std::vector<LevelSpec>& levels,
                      const std::vector<double>& proportions);

}  // namespace heterofl::zoo
