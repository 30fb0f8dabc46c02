#pragma once

#include <optional>
#include <vector>

#include "heterofl/nn/layers.hpp"

namespace heterofl::nn {

/// SGD with momentum, weight decay and global-norm gradient clipping.
///
/// Clipping rescales the full gradient set so its joint L2 norm does not
/// exceed clip_norm, then per parameter:
///   v <- momentum * v + (g + weight_decay * w)
///   w <- w - lr * v
/// Parameters flagged decay_exempt skip the weight-decay term.
template <class S>
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, double weight_decay,
               std::optional<double> clip_norm);

  /// Allocates velocity buffers matching `params`; call once per model.
  void attach(const std::vector<ParamRef<S>>& params);

  /// One update step. Throws std::runtime_error naming the parameter if a
  /// gradient is non-finite.
  void step(const std::vector<ParamRef<S>>& params);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::optional<double> clip_norm_;
  std::vector<TensorT<S>> velocity_;
};

}  // namespace heterofl::nn
