#include "heterofl/nn/moments.hpp"

#include <stdexcept>

namespace heterofl::nn {

template <class S>
ChannelMoments batch_moments(const TensorT<S>& activations, std::size_t channels) {
  if (activations.rank() != 2 && activations.rank() != 4) {
    throw std::invalid_argument("batch_moments: expected rank-2 or rank-4 activations");
  }
  if (activations.dim(1) != channels) {
    throw std::invalid_argument("batch_moments: channel axis mismatch");
  }
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < activations.rank(); ++i) spatial *= activations.dim(i);
  const std::size_t batch = activations.dim(0);
  const std::size_t stride_b = channels * spatial;

  ChannelMoments out;
  out.count = batch * spatial;
  out.mean.assign(channels, 0.0);
  out.m2.assign(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const S* src = activations.data() + b * stride_b + c * spatial;
      for (std::size_t s = 0; s < spatial; ++s) sum += static_cast<double>(src[s]);
    }
    out.mean[c] = sum / static_cast<double>(out.count);
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const S* src = activations.data() + b * stride_b + c * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        const double d = static_cast<double>(src[s]) - out.mean[c];
        acc += d * d;
      }
    }
    out.m2[c] = acc;
  }
  return out;
}

MomentAccumulator::MomentAccumulator(std::size_t channels)
    : mean_(channels, 0.0), m2_(channels, 0.0) {
  if (channels == 0) throw std::invalid_argument("MomentAccumulator: channels must be >= 1");
}

template <class S>
void MomentAccumulator::add_batch(const TensorT<S>& activations) {
  merge(batch_moments(activations, mean_.size()));
}

void MomentAccumulator::merge(const ChannelMoments& chunk) {
  if (chunk.mean.size() != mean_.size()) {
    throw std::invalid_argument("MomentAccumulator: channel count mismatch in merge");
  }
  if (chunk.count == 0) return;
  if (count_ == 0) {
    count_ = chunk.count;
    mean_ = chunk.mean;
    m2_ = chunk.m2;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(chunk.count);
  const double n = na + nb;
  for (std::size_t c = 0; c < mean_.size(); ++c) {
    const double delta = chunk.mean[c] - mean_[c];
    mean_[c] += delta * (nb / n);
    m2_[c] += chunk.m2[c] + delta * delta * (na * nb / n);
  }
  count_ += chunk.count;
}

std::vector<double> MomentAccumulator::mean() const {
  if (count_ == 0) throw std::runtime_error("MomentAccumulator: no examples accumulated");
  return mean_;
}

std::vector<double> MomentAccumulator::population_variance() const {
  if (count_ == 0) throw std::runtime_error("MomentAccumulator: no examples accumulated");
  std::vector<double> var(m2_.size());
  for (std::size_t c = 0; c < m2_.size(); ++c) var[c] = m2_[c] / static_cast<double>(count_);
  return var;
}

template ChannelMoments batch_moments(const TensorT<float>&, std::size_t);
template ChannelMoments batch_moments(const TensorT<double>&, std::size_t);
template void MomentAccumulator::add_batch(const TensorT<float>&);
template void MomentAccumulator::add_batch(const TensorT<double>&);

}  // namespace heterofl::nn
