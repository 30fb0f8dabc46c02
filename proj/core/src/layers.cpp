#include "heterofl/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <sstream>
#include <stdexcept>

#include "heterofl/nn/moments.hpp"
#include "heterofl/parallel.hpp"

namespace heterofl::nn {

namespace {

[[noreturn]] void layer_error(const std::string& layer, const std::string& what) {
  throw std::invalid_argument(layer + ": " + what);
}

template <class S>
void require_rank(const std::string& layer, const TensorT<S>& x, std::size_t rank) {
  if (x.rank() != rank) {
    layer_error(layer, "expected rank-" + std::to_string(rank) + " input, got rank-" +
                           std::to_string(x.rank()));
  }
}

}  // namespace

// --------------------------------------------------------------------------
// Linear
// --------------------------------------------------------------------------

template <class S>
LinearLayer<S>::LinearLayer(std::string name, std::size_t in_features, std::size_t out_features)
    : Layer<S>(std::move(name)),
      weight({out_features, in_features}),
      bias({out_features}),
      grad_weight({out_features, in_features}),
      grad_bias({out_features}) {}

template <class S>
TensorT<S> LinearLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  require_rank(this->name(), x, 2);
  if (x.dim(1) != weight.dim(1)) {
    layer_error(this->name(), "input features " + std::to_string(x.dim(1)) +
                                  " != weight columns " + std::to_string(weight.dim(1)));
  }
  const std::size_t n = x.dim(0), out = weight.dim(0), in = weight.dim(1);
  TensorT<S> y({n, out});
  gemm_nt(n, out, in, x.data(), weight.data(), y.data(), false);
  for (std::size_t b = 0; b < n; ++b) {
    S* row = y.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) row[o] += bias[o];
  }
  // Inference touches no members, so a shared model can serve batches from
  // several threads at once.
  if (mode == Mode::train) {
    cached_input_ = x;
    has_cache_ = true;
  }
  return y;
}

template <class S>
TensorT<S> LinearLayer<S>::backward(const TensorT<S>& dy) {
  if (!has_cache_) throw std::logic_error(this->name() + ": backward without cached forward");
  const std::size_t n = cached_input_.dim(0), out = weight.dim(0), in = weight.dim(1);
  // dW[o,i] = sum_b dy[b,o] * x[b,i]
  gemm_tn(out, in, n, dy.data(), cached_input_.data(), grad_weight.data(), false);
  grad_bias.fill(S(0));
  for (std::size_t b = 0; b < n; ++b) {
    const S* row = dy.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) grad_bias[o] += row[o];
  }
  TensorT<S> dx({n, in});
  gemm_nn(n, in, out, dy.data(), weight.data(), dx.data(), false);
  return dx;
}

template <class S>
void LinearLayer<S>::collect_params(std::vector<ParamRef<S>>& out) {
  out.push_back({this->name() + ".weight", ParamKind::weight, &weight, &grad_weight, false});
  out.push_back({this->name() + ".bias", ParamKind::bias, &bias, &grad_bias, false});
}

// --------------------------------------------------------------------------
// Conv2d
// --------------------------------------------------------------------------

template <class S>
Conv2dLayer<S>::Conv2dLayer(std::string name, std::size_t in_channels, std::size_t out_channels,
                            std::size_t kernel, std::size_t stride, std::size_t pad)
    : Layer<S>(std::move(name)),
      weight({out_channels, in_channels, kernel, kernel}),
      bias({out_channels}),
      grad_weight({out_channels, in_channels, kernel, kernel}),
      grad_bias({out_channels}),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {}

template <class S>
TensorT<S> Conv2dLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  require_rank(this->name(), x, 4);
  if (x.dim(1) != weight.dim(1)) {
    layer_error(this->name(), "input channels " + std::to_string(x.dim(1)) +
                                  " != kernel channels " + std::to_string(weight.dim(1)));
  }
  const Conv2dGeom geom{x.dim(1), x.dim(2), x.dim(3), kernel_, kernel_, stride_, pad_};
  if (x.dim(2) + 2 * pad_ < kernel_ || x.dim(3) + 2 * pad_ < kernel_) {
    layer_error(this->name(), "input smaller than kernel");
  }
  const std::size_t n = x.dim(0), oc = weight.dim(0);
  const std::size_t oh = geom.out_h(), ow = geom.out_w();
  const std::size_t positions = n * oh * ow;

  // Inference uses local scratch only; the cached patch matrix exists just
  // for the backward pass.
  std::vector<S> local_col;
  std::vector<S>& col = mode == Mode::train ? col_ : local_col;
  col.resize(geom.patch() * positions);
  im2col(x.data(), n, geom, col.data());

  std::vector<S> ymat(oc * positions);
  gemm_nn(oc, positions, geom.patch(), weight.data(), col.data(), ymat.data(), false);

  TensorT<S> y({n, oc, oh, ow});
  const std::size_t plane = oh * ow;
  for (std::size_t o = 0; o < oc; ++o) {
    const S bval = bias[o];
    for (std::size_t b = 0; b < n; ++b) {
      const S* src = ymat.data() + o * positions + b * plane;
      S* dst = y.data() + (b * oc + o) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bval;
    }
  }

  if (mode == Mode::train) {
    geom_ = geom;
    cached_batch_ = n;
    has_cache_ = true;
  }
  return y;
}

template <class S>
TensorT<S> Conv2dLayer<S>::backward(const TensorT<S>& dy) {
  if (!has_cache_) throw std::logic_error(this->name() + ": backward without cached forward");
  const std::size_t n = cached_batch_, oc = weight.dim(0);
  const std::size_t oh = geom_.out_h(), ow = geom_.out_w();
  const std::size_t plane = oh * ow, positions = n * plane;

  // Reorder dy [n, oc, oh, ow] -> dymat [oc, positions], bias grad on the way.
  std::vector<S> dymat(oc * positions);
  grad_bias.fill(S(0));
  for (std::size_t o = 0; o < oc; ++o) {
    double bsum = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const S* src = dy.data() + (b * oc + o) * plane;
      S* dst = dymat.data() + o * positions + b * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        dst[p] = src[p];
        bsum += static_cast<double>(src[p]);
      }
    }
    grad_bias[o] = static_cast<S>(bsum);
  }

  // dW = dymat * col^T  (both have `positions` as the shared axis).
  gemm_nt(oc, geom_.patch(), positions, dymat.data(), col_.data(), grad_weight.data(), false);

  // dcol = W^T * dymat, then scatter back to image space.
  std::vector<S> dcol(geom_.patch() * positions);
  gemm_tn(geom_.patch(), positions, oc, weight.data(), dymat.data(), dcol.data(), false);

  TensorT<S> dx({n, geom_.in_c, geom_.in_h, geom_.in_w});
  col2im(dcol.data(), n, geom_, dx.data());
  return dx;
}

template <class S>
void Conv2dLayer<S>::collect_params(std::vector<ParamRef<S>>& out) {
  out.push_back({this->name() + ".weight", ParamKind::weight, &weight, &grad_weight, false});
  out.push_back({this->name() + ".bias", ParamKind::bias, &bias, &grad_bias, false});
}

// --------------------------------------------------------------------------
// Static batch normalization
// --------------------------------------------------------------------------

template <class S>
SbnLayer<S>::SbnLayer(std::string name, std::size_t channels, double epsilon)
    : Layer<S>(std::move(name)),
      gamma(TensorT<S>::full({channels}, S(1))),
      beta({channels}),
      grad_gamma({channels}),
      grad_beta({channels}),
      eps_(epsilon) {}

namespace {

// Channel geometry shared by the sBN paths: [N, C] or [N, C, H, W].
struct ChannelLayout {
  std::size_t batch, channels, spatial;
};

template <class S>
ChannelLayout channel_layout(const std::string& layer, const TensorT<S>& x, std::size_t channels) {
  if (x.rank() != 2 && x.rank() != 4) layer_error(layer, "expected rank-2 or rank-4 input");
  if (x.dim(1) != channels) {
    layer_error(layer, "channel axis " + std::to_string(x.dim(1)) + " != " +
                           std::to_string(channels));
  }
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < x.rank(); ++i) spatial *= x.dim(i);
  return {x.dim(0), channels, spatial};
}

}  // namespace

template <class S>
TensorT<S> SbnLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  const ChannelLayout lay = channel_layout(this->name(), x, channels());
  const std::size_t stride_b = lay.channels * lay.spatial;
  TensorT<S> y(x.shape());

  if (mode == Mode::infer) {
    if (!has_frozen_) {
      throw std::runtime_error(this->name() +
                               ": inference requires frozen statistics (run sBN finalization)");
    }
    for (std::size_t c = 0; c < lay.channels; ++c) {
      const double istd = 1.0 / std::sqrt(static_cast<double>(frozen_var_[c]) + eps_);
      const S sc = static_cast<S>(static_cast<double>(gamma[c]) * istd);
      const S sh = static_cast<S>(static_cast<double>(beta[c]) -
                                  static_cast<double>(frozen_mean_[c]) *
                                      static_cast<double>(gamma[c]) * istd);
      for (std::size_t b = 0; b < lay.batch; ++b) {
        const S* src = x.data() + b * stride_b + c * lay.spatial;
        S* dst = y.data() + b * stride_b + c * lay.spatial;
        for (std::size_t s = 0; s < lay.spatial; ++s) dst[s] = sc * src[s] + sh;
      }
    }
    return y;
  }

  // Train mode: normalize with the batch moments (biased variance).
  const std::size_t reduce = lay.batch * lay.spatial;
  xhat_ = TensorT<S>(x.shape());
  inv_std_.assign(lay.channels, 0.0);
  reduce_count_ = reduce;

  for (std::size_t c = 0; c < lay.channels; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const S* src = x.data() + b * stride_b + c * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) sum += static_cast<double>(src[s]);
    }
    const double mean = sum / static_cast<double>(reduce);
    double varsum = 0.0;
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const S* src = x.data() + b * stride_b + c * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        const double d = static_cast<double>(src[s]) - mean;
        varsum += d * d;
      }
    }
    const double var = varsum / static_cast<double>(reduce);
    const double istd = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = istd;
    const double g = static_cast<double>(gamma[c]);
    const double bshift = static_cast<double>(beta[c]);
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const S* src = x.data() + b * stride_b + c * lay.spatial;
      S* xh = xhat_.data() + b * stride_b + c * lay.spatial;
      S* dst = y.data() + b * stride_b + c * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        const double h = (static_cast<double>(src[s]) - mean) * istd;
        xh[s] = static_cast<S>(h);
        dst[s] = static_cast<S>(g * h + bshift);
      }
    }
  }
  has_cache_ = true;
  return y;
}

template <class S>
TensorT<S> SbnLayer<S>::backward(const TensorT<S>& dy) {
  if (!has_cache_) throw std::logic_error(this->name() + ": backward without cached forward");
  const ChannelLayout lay = channel_layout(this->name(), dy, channels());
  const std::size_t stride_b = lay.channels * lay.spatial;
  const double r = static_cast<double>(reduce_count_);
  TensorT<S> dx(dy.shape());

  for (std::size_t c = 0; c < lay.channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const S* g = dy.data() + b * stride_b + c * lay.spatial;
      const S* xh = xhat_.data() + b * stride_b + c * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        sum_dy += static_cast<double>(g[s]);
        sum_dy_xhat += static_cast<double>(g[s]) * static_cast<double>(xh[s]);
      }
    }
    grad_beta[c] = static_cast<S>(sum_dy);
    grad_gamma[c] = static_cast<S>(sum_dy_xhat);

    const double mean_dy = sum_dy / r;
    const double mean_dy_xhat = sum_dy_xhat / r;
    const double scale = static_cast<double>(gamma[c]) * inv_std_[c];
    for (std::size_t b = 0; b < lay.batch; ++b) {
      const S* g = dy.data() + b * stride_b + c * lay.spatial;
      const S* xh = xhat_.data() + b * stride_b + c * lay.spatial;
      S* out = dx.data() + b * stride_b + c * lay.spatial;
      for (std::size_t s = 0; s < lay.spatial; ++s) {
        out[s] = static_cast<S>(scale * (static_cast<double>(g[s]) - mean_dy -
                                         static_cast<double>(xh[s]) * mean_dy_xhat));
      }
    }
  }
  return dx;
}

template <class S>
void SbnLayer<S>::collect_params(std::vector<ParamRef<S>>& out) {
  out.push_back({this->name() + ".gamma", ParamKind::gamma, &gamma, &grad_gamma, true});
  out.push_back({this->name() + ".beta", ParamKind::beta, &beta, &grad_beta, true});
}

template <class S>
void SbnLayer<S>::set_frozen(const TensorT<S>& mean, const TensorT<S>& variance) {
  if (mean.rank() != 1 || mean.dim(0) != channels() || variance.rank() != 1 ||
      variance.dim(0) != channels()) {
    layer_error(this->name(), "frozen statistics must be per-channel vectors");
  }
  for (std::size_t c = 0; c < channels(); ++c) {
    if (!(variance[c] >= S(0))) {
      throw std::invalid_argument(this->name() + ": frozen variance must be >= 0 (channel " +
                                  std::to_string(c) + ")");
    }
  }
  frozen_mean_ = mean;
  frozen_var_ = variance;
  has_frozen_ = true;
}

template <class S>
void SbnLayer<S>::clear_frozen() {
  has_frozen_ = false;
  frozen_mean_ = TensorT<S>();
  frozen_var_ = TensorT<S>();
}

template <class S>
const TensorT<S>& SbnLayer<S>::frozen_mean() const {
  if (!has_frozen_) throw std::logic_error(this->name() + ": no frozen statistics");
  return frozen_mean_;
}

template <class S>
const TensorT<S>& SbnLayer<S>::frozen_variance() const {
  if (!has_frozen_) throw std::logic_error(this->name() + ": no frozen statistics");
  return frozen_var_;
}

// --------------------------------------------------------------------------
// Scaler
// --------------------------------------------------------------------------

template <class S>
ScalerLayer<S>::ScalerLayer(std::string name, double factor)
    : Layer<S>(std::move(name)), factor_(factor) {
  if (!(factor > 0.0)) layer_error(this->name(), "factor must be positive");
}

template <class S>
TensorT<S> ScalerLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  if (mode == Mode::infer) return x;  // identity, bit for bit
  TensorT<S> y = x;
  y.scale_(static_cast<S>(factor_));
  return y;
}

template <class S>
TensorT<S> ScalerLayer<S>::backward(const TensorT<S>& dy) {
  TensorT<S> dx = dy;
  dx.scale_(static_cast<S>(factor_));
  return dx;
}

// --------------------------------------------------------------------------
// ReLU
// --------------------------------------------------------------------------

template <class S>
TensorT<S> ReluLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  TensorT<S> y = x;
  for (auto& v : y.values())
    if (v < S(0)) v = S(0);
  if (mode == Mode::train) {
    cached_input_ = x;
    has_cache_ = true;
  }
  return y;
}

template <class S>
TensorT<S> ReluLayer<S>::backward(const TensorT<S>& dy) {
  if (!has_cache_) throw std::logic_error(this->name() + ": backward without cached forward");
  TensorT<S> dx = dy;
  const S* x = cached_input_.data();
  S* d = dx.data();
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (x[i] <= S(0)) d[i] = S(0);
  return dx;
}

// --------------------------------------------------------------------------
// Max pooling
// --------------------------------------------------------------------------

template <class S>
MaxPool2dLayer<S>::MaxPool2dLayer(std::string name, std::size_t kernel, std::size_t stride)
    : Layer<S>(std::move(name)), kernel_(kernel), stride_(stride) {}

template <class S>
TensorT<S> MaxPool2dLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  require_rank(this->name(), x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < kernel_ || w < kernel_) layer_error(this->name(), "input smaller than pooling window");
  const std::size_t oh = (h - kernel_) / stride_ + 1;
  const std::size_t ow = (w - kernel_) / stride_ + 1;
  TensorT<S> y({n, c, oh, ow});
  const bool record = mode == Mode::train;
  if (record) argmax_.assign(n * c * oh * ow, 0);

  std::size_t out_idx = 0;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S* plane = x.data() + (b * c + ch) * h * w;
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t y0 = oy * stride_, x0 = ox * stride_;
          std::size_t best = y0 * w + x0;
          S best_v = plane[best];
          for (std::size_t ky = 0; ky < kernel_; ++ky) {
            for (std::size_t kx = 0; kx < kernel_; ++kx) {
              const std::size_t idx = (y0 + ky) * w + (x0 + kx);
              if (plane[idx] > best_v) {  // first maximum wins ties
                best_v = plane[idx];
                best = idx;
              }
            }
          }
          y[out_idx] = best_v;
          if (record) argmax_[out_idx] = static_cast<std::uint32_t>(best);
          ++out_idx;
        }
      }
    }
  }

  if (record) {
    in_shape_ = x.shape();
    has_cache_ = true;
  }
  return y;
}

template <class S>
TensorT<S> MaxPool2dLayer<S>::backward(const TensorT<S>& dy) {
  if (!has_cache_) throw std::logic_error(this->name() + ": backward without cached forward");
  const std::size_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  TensorT<S> dx({n, c, h, w});
  const std::size_t planes = n * c;
  const std::size_t out_plane = dy.size() / planes;
  for (std::size_t p = 0; p < planes; ++p) {
    const S* g = dy.data() + p * out_plane;
    S* dst = dx.data() + p * h * w;
    const std::uint32_t* am = argmax_.data() + p * out_plane;
    for (std::size_t i = 0; i < out_plane; ++i) dst[am[i]] += g[i];
  }
  return dx;
}

// --------------------------------------------------------------------------
// Global average pooling
// --------------------------------------------------------------------------

template <class S>
TensorT<S> GlobalAvgPoolLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  require_rank(this->name(), x, 4);
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  TensorT<S> y({n, c});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S* src = x.data() + (b * c + ch) * plane;
      double sum = 0.0;
      for (std::size_t p = 0; p < plane; ++p) sum += static_cast<double>(src[p]);
      y[b * c + ch] = static_cast<S>(sum / static_cast<double>(plane));
    }
  }
  if (mode == Mode::train) {
    in_shape_ = x.shape();
    has_cache_ = true;
  }
  return y;
}

template <class S>
TensorT<S> GlobalAvgPoolLayer<S>::backward(const TensorT<S>& dy) {
  if (!has_cache_) throw std::logic_error(this->name() + ": backward without cached forward");
  const std::size_t n = in_shape_[0], c = in_shape_[1], plane = in_shape_[2] * in_shape_[3];
  TensorT<S> dx({n, c, in_shape_[2], in_shape_[3]});
  const S inv = static_cast<S>(1.0 / static_cast<double>(plane));
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const S v = dy[b * c + ch] * inv;
      S* dst = dx.data() + (b * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = v;
    }
  }
  return dx;
}

// --------------------------------------------------------------------------
// Flatten
// --------------------------------------------------------------------------

template <class S>
TensorT<S> FlattenLayer<S>::forward(const TensorT<S>& x, Mode mode) {
  if (x.rank() < 2) layer_error(this->name(), "expected rank >= 2");
  if (mode == Mode::train) in_shape_ = x.shape();
  std::size_t rest = 1;
  for (std::size_t i = 1; i < x.rank(); ++i) rest *= x.dim(i);
  return TensorT<S>({x.dim(0), rest}, std::vector<S>(x.values().begin(), x.values().end()));
}

template <class S>
TensorT<S> FlattenLayer<S>::backward(const TensorT<S>& dy) {
  return TensorT<S>(in_shape_, std::vector<S>(dy.values().begin(), dy.values().end()));
}

// --------------------------------------------------------------------------
// Model
// --------------------------------------------------------------------------

template <class S>
TensorT<S> Model<S>::forward(const TensorT<S>& batch, Mode mode) {
  TensorT<S> act = batch;
  for (auto& layer : layers_) act = layer->forward(act, mode);
  ready_for_backward_ = (mode == Mode::train);
  return act;
}

template <class S>
TensorT<S> Model<S>::forward_prefix(const TensorT<S>& batch, std::size_t end, Mode mode) const {
  TensorT<S> act = batch;
  for (std::size_t i = 0; i < end && i < layers_.size(); ++i) act = layers_[i]->forward(act, mode);
  return act;
}

template <class S>
void Model<S>::backward(const TensorT<S>& dlogits) {
  if (!ready_for_backward_) {
    throw std::logic_error("model backward called without a cached train-mode forward");
  }
  TensorT<S> grad = dlogits;
  for (std::size_t i = layers_.size(); i > 0; --i) grad = layers_[i - 1]->backward(grad);
  ready_for_backward_ = false;
}

template <class S>
std::vector<ParamRef<S>> Model<S>::params() {
  std::vector<ParamRef<S>> out;
  for (auto& layer : layers_) layer->collect_params(out);
  return out;
}

template <class S>
void Model<S>::zero_grad() {
  for (auto& p : params()) p.grad->fill(S(0));
}

template <class S>
std::vector<std::pair<std::string, TensorT<S>>> Model<S>::harvest_params() {
  std::vector<std::pair<std::string, TensorT<S>>> out;
  for (auto& p : params()) out.emplace_back(p.name, *p.value);
  return out;
}

template <class S>
void Model<S>::load_params(std::span<const std::pair<std::string, TensorT<S>>> named) {
  std::map<std::string, const TensorT<S>*> index;
  for (const auto& [name, tensor] : named) index[name] = &tensor;
  auto refs = params();
  if (index.size() != refs.size()) {
    throw std::invalid_argument("load_params: expected " + std::to_string(refs.size()) +
                                " parameters, got " + std::to_string(index.size()));
  }
  for (auto& p : refs) {
    auto it = index.find(p.name);
    if (it == index.end()) throw std::invalid_argument("load_params: missing parameter " + p.name);
    if (!(it->second->shape() == p.value->shape())) {
      throw std::invalid_argument("load_params: shape mismatch for " + p.name);
    }
    *p.value = *it->second;
  }
}

template <class S>
std::vector<SbnLayer<S>*> Model<S>::sbn_layers() {
  std::vector<SbnLayer<S>*> out;
  for (auto& layer : layers_) {
    if (auto* s = dynamic_cast<SbnLayer<S>*>(layer.get())) out.push_back(s);
  }
  return out;
}

template <class S>
std::vector<SbnSnapshot<S>> Model<S>::harvest_sbn_stats() {
  std::vector<SbnSnapshot<S>> out;
  for (auto* s : sbn_layers()) {
    out.push_back({s->name(), s->frozen_mean(), s->frozen_variance()});
  }
  return out;
}

template <class S>
void Model<S>::install_sbn_stats(std::span<const SbnSnapshot<S>> stats) {
  auto layers = sbn_layers();
  if (stats.size() != layers.size()) {
    throw std::invalid_argument("install_sbn_stats: expected " + std::to_string(layers.size()) +
                                " snapshots, got " + std::to_string(stats.size()));
  }
  for (auto* s : layers) {
    const SbnSnapshot<S>* found = nullptr;
    for (const auto& snap : stats) {
      if (snap.layer == s->name()) {
        found = &snap;
        break;
      }
    }
    if (!found) throw std::invalid_argument("install_sbn_stats: no snapshot for " + s->name());
    s->set_frozen(found->mean, found->variance);
  }
}

// --------------------------------------------------------------------------
// sBN finalization
// --------------------------------------------------------------------------

template <class S>
void finalize_sbn_statistics(
    Model<S>& model,
    const std::function<void(const std::function<void(const TensorT<S>&)>&)>& replay,
    unsigned threads) {
  auto sbns = model.sbn_layers();
  for (auto* s : sbns) s->clear_frozen();

  // Locate each sBN layer's position in the stack.
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (model.layer(i).type() == std::string("sbn")) positions.push_back(i);
  }
  if (positions.empty()) return;

  // Materialize the stream once; every per-layer pass reuses it.
  std::vector<TensorT<S>> batches;
  replay([&](const TensorT<S>& batch) { batches.push_back(batch); });

  for (std::size_t k = 0; k < positions.size(); ++k) {
    // Per-batch prefix forwards and moments are independent (inference-mode
    // forwards touch no shared state); merging stays in stream order, so the
    // statistics are identical at any thread count.
    std::vector<ChannelMoments> chunk(batches.size());
    parallel_for(batches.size(), threads, [&](std::size_t b) {
      chunk[b] = batch_moments(model.forward_prefix(batches[b], positions[k], Mode::infer),
                               sbns[k]->channels());
    });
    MomentAccumulator acc(sbns[k]->channels());
    for (const auto& m : chunk) acc.merge(m);

    const auto mean = acc.mean();
    const auto var = acc.population_variance();
    TensorT<S> mean_t({mean.size()});
    TensorT<S> var_t({var.size()});
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean_t[c] = static_cast<S>(mean[c]);
      var_t[c] = static_cast<S>(std::max(0.0, var[c]));
    }
    sbns[k]->set_frozen(mean_t, var_t);
  }
}

#define HETEROFL_NN_INSTANTIATE(S)                                  \
  template class LinearLayer<S>;                                    \
  template class Conv2dLayer<S>;                                    \
  template class SbnLayer<S>;                                       \
  template class ScalerLayer<S>;                                    \
  template class ReluLayer<S>;                                      \
  template class MaxPool2dLayer<S>;                                 \
  template class GlobalAvgPoolLayer<S>;                             \
  template class FlattenLayer<S>;                                   \
  template class Model<S>;                                          \
  template void finalize_sbn_statistics(                            \
      Model<S>&,                                                    \
      const std::function<void(const std::function<void(const TensorT<S>&)>&)>&, unsigned);

HETEROFL_NN_INSTANTIATE(float)
HETEROFL_NN_INSTANTIATE(double)
#undef HETEROFL_NN_INSTANTIATE

}  // namespace heterofl::nn
