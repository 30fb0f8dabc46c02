#include "heterofl/nn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace heterofl::nn {

namespace {

// Row-wise stable log-sum-exp over a double buffer.
double logsumexp(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  return m + std::log(sum);
}

template <class S>
LossResult<S> softmax_ce_impl(const TensorT<S>& logits, std::span<const std::int32_t> labels,
                              const std::vector<std::uint8_t>* keep) {
  if (logits.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be [batch, classes]");
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count != batch size");

  LossResult<S> out;
  out.logit_grad = TensorT<S>(logits.shape());
  double total = 0.0;
  std::vector<double> row(classes);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t b = 0; b < n; ++b) {
    const std::int32_t label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
    const S* src = logits.data() + b * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      const bool masked = keep && !(*keep)[c];
      row[c] = masked ? 0.0 : static_cast<double>(src[c]);
    }
    const double lse = logsumexp(row);
    total += lse - row[static_cast<std::size_t>(label)];

    S* g = out.logit_grad.data() + b * classes;
    for (std::size_t c = 0; c < classes; ++c) {
      if (keep && !(*keep)[c]) {
        g[c] = S(0);  // constant substitution: replaced logits get no gradient
        continue;
      }
      double p = std::exp(row[c] - lse);
      if (static_cast<std::int32_t>(c) == label) p -= 1.0;
      g[c] = static_cast<S>(p * inv_n);
    }
  }
  out.loss = total * inv_n;
  return out;
}

}  // namespace

template <class S>
LossResult<S> cross_entropy(const TensorT<S>& logits, std::span<const std::int32_t> labels) {
  return softmax_ce_impl(logits, labels, nullptr);
}

template <class S>
LossResult<S> masked_cross_entropy(const TensorT<S>& logits, std::span<const std::int32_t> labels,
                                   const std::set<std::int32_t>& local_labels) {
  if (logits.rank() != 2) throw std::invalid_argument("masked_cross_entropy: logits must be rank-2");
  const std::size_t classes = logits.dim(1);
  std::vector<std::uint8_t> keep(classes, 0);
  for (std::int32_t c : local_labels) {
    if (c < 0 || static_cast<std::size_t>(c) >= classes) {
      throw std::invalid_argument("masked_cross_entropy: local label " + std::to_string(c) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
    keep[static_cast<std::size_t>(c)] = 1;
  }
  for (std::int32_t label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes || !keep[label]) {
      throw std::invalid_argument("masked_cross_entropy: label " + std::to_string(label) +
                                  " not in the local label set");
    }
  }
  return softmax_ce_impl(logits, labels, &keep);
}

template LossResult<float> cross_entropy(const TensorT<float>&, std::span<const std::int32_t>);
template LossResult<double> cross_entropy(const TensorT<double>&, std::span<const std::int32_t>);
template LossResult<float> masked_cross_entropy(const TensorT<float>&, std::span<const std::int32_t>,
                                                const std::set<std::int32_t>&);
template LossResult<double> masked_cross_entropy(const TensorT<double>&,
                                                 std::span<const std::int32_t>,
                                                 const std::set<std::int32_t>&);

}  // namespace heterofl::nn
