#pragma once

#include <cstddef>
#include <vector>

#include "heterofl/tensor.hpp"

namespace heterofl::nn {

/// Per-channel (count, mean, M2) of one chunk of activations.
struct ChannelMoments {
  std::size_t count = 0;
  std::vector<double> mean;
  std::vector<double> m2;
};

/// Exact two-pass moments of a batch shaped [N, C] or [N, C, H, W].
template <class S>
ChannelMoments batch_moments(const TensorT<S>& activations, std::size_t channels);

/// Streaming per-channel first/second moments with numerically stable
/// (count, mean, M2) merging. Merging chunk moments in stream order
/// reproduces the exact single-pass whole-stream result regardless of how
/// the stream is split. Accumulation is always in double.
class MomentAccumulator {
 public:
  explicit MomentAccumulator(std::size_t channels);

  /// Folds in one batch (computes its moments, then merges).
  template <class S>
  void add_batch(const TensorT<S>& activations);

  /// Folds in precomputed chunk moments; equivalent to add_batch on the
  /// chunk they came from.
  void merge(const ChannelMoments& chunk);

  std::size_t channels() const { return mean_.size(); }
  std::size_t count() const { return count_; }

  /// Per-channel mean / biased (population) variance of everything streamed.
  /// Throw if nothing was accumulated.
  std::vector<double> mean() const;
  std::vector<double> population_variance() const;

 private:
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

}  // namespace heterofl::nn
