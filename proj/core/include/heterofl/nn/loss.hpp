#pragma once

#include <cstdint>
#include <set>
#include <span>

#include "heterofl/tensor.hpp"

namespace heterofl::nn {

template <class S>
struct LossResult {
  double loss = 0.0;       // mean over the batch
  TensorT<S> logit_grad;   // d loss / d logits, already divided by batch size
};

/// Mean softmax cross-entropy. Labels must lie in [0, num_classes).
template <class S>
LossResult<S> cross_entropy(const TensorT<S>& logits, std::span<const std::int32_t> labels);

/// Cross-entropy after replacing logits of classes outside `local_labels`
/// with zero. The replacement is a constant substitution: no gradient flows
/// to the replaced positions, so the classifier rows of absent classes stay
/// untrained. Every label must be a member of `local_labels`.
template <class S>
LossResult<S> masked_cross_entropy(const TensorT<S>& logits, std::span<const std::int32_t> labels,
                                   const std::set<std::int32_t>& local_labels);

}  // namespace heterofl::nn
