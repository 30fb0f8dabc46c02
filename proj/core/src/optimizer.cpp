#include "heterofl/nn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace heterofl::nn {

template <class S>
SgdOptimizer<S>::SgdOptimizer(double lr, double momentum, double weight_decay,
                              std::optional<double> clip_norm)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay), clip_norm_(clip_norm) {
  if (!(lr > 0.0)) throw std::invalid_argument("SgdOptimizer: learning rate must be positive");
  if (momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("SgdOptimizer: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("SgdOptimizer: weight decay must be >= 0");
  if (clip_norm && !(*clip_norm > 0.0))
    throw std::invalid_argument("SgdOptimizer: clip norm must be positive");
}

template <class S>
void SgdOptimizer<S>::attach(const std::vector<ParamRef<S>>& params) {
  velocity_.clear();
  velocity_.reserve(params.size());
  for (const auto& p : params) velocity_.emplace_back(p.value->shape());
}

template <class S>
void SgdOptimizer<S>::step(const std::vector<ParamRef<S>>& params) {
  if (velocity_.size() != params.size()) {
    throw std::logic_error("SgdOptimizer: attach() must be called with the same parameter set");
  }

  double sq_norm = 0.0;
  for (const auto& p : params) {
    for (S g : p.grad->values()) {
      const double gd = static_cast<double>(g);
      if (!std::isfinite(gd)) {
        throw std::runtime_error("SgdOptimizer: non-finite gradient in parameter " + p.name);
      }
      sq_norm += gd * gd;
    }
  }

  double grad_scale = 1.0;
  if (clip_norm_) {
    const double norm = std::sqrt(sq_norm);
    if (norm > *clip_norm_) grad_scale = *clip_norm_ / norm;
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    const S wd = static_cast<S>(p.decay_exempt ? 0.0 : weight_decay_);
    const S gs = static_cast<S>(grad_scale);
    const S mu = static_cast<S>(momentum_);
    const S eta = static_cast<S>(lr_);
    S* __restrict__ w = p.value->data();
    const S* __restrict__ g = p.grad->data();
    S* __restrict__ v = velocity_[i].data();
    const std::size_t count = p.value->size();
    for (std::size_t j = 0; j < count; ++j) {
      v[j] = mu * v[j] + (gs * g[j] + wd * w[j]);
      w[j] -= eta * v[j];
    }
  }
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;

}  // namespace heterofl::nn
