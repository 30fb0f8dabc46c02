#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "heterofl/tensor.hpp"

namespace heterofl::nn {

enum class Mode { train, infer };

enum class ParamKind { weight, bias, gamma, beta };

/// Named view of one trainable tensor and its gradient slot.
template <class S>
struct ParamRef {
  std::string name;  // "<layer>.<field>", stable across complexity levels
  ParamKind kind = ParamKind::weight;
  TensorT<S>* value = nullptr;
  TensorT<S>* grad = nullptr;
  bool decay_exempt = false;  // sBN gamma/beta stay out of weight decay
};

template <class S>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  virtual const char* type() const = 0;
  virtual TensorT<S> forward(const TensorT<S>& x, Mode mode) = 0;
  /// Consumes the upstream gradient, fills parameter gradients (set, not
  /// accumulated) and returns the input gradient. Valid only after a
  /// train-mode forward.
  virtual TensorT<S> backward(const TensorT<S>& dy) = 0;
  virtual void collect_params(std::vector<ParamRef<S>>& out) { (void)out; }

  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

template <class S>
class LinearLayer final : public Layer<S> {
 public:
  LinearLayer(std::string name, std::size_t in_features, std::size_t out_features);

  const char* type() const override { return "linear"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;
  void collect_params(std::vector<ParamRef<S>>& out) override;

  TensorT<S> weight;  // [out, in]
  TensorT<S> bias;    // [out]
  TensorT<S> grad_weight, grad_bias;

 private:
  TensorT<S> cached_input_;
  bool has_cache_ = false;
};

template <class S>
class Conv2dLayer final : public Layer<S> {
 public:
  Conv2dLayer(std::string name, std::size_t in_channels, std::size_t out_channels,
              std::size_t kernel, std::size_t stride, std::size_t pad);

  const char* type() const override { return "conv"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;
  void collect_params(std::vector<ParamRef<S>>& out) override;

  TensorT<S> weight;  // [out_c, in_c, kh, kw]
  TensorT<S> bias;    // [out_c]
  TensorT<S> grad_weight, grad_bias;

 private:
  std::size_t kernel_, stride_, pad_;
  Conv2dGeom geom_{};
  std::size_t cached_batch_ = 0;
  std::vector<S> col_;  // cached patch matrix from the train forward
  bool has_cache_ = false;
};

/// Static batch normalization: normalizes with batch statistics while
/// training and keeps no running estimates. Inference requires frozen
/// statistics installed by the finalization pass.
template <class S>
class SbnLayer final : public Layer<S> {
 public:
  SbnLayer(std::string name, std::size_t channels, double epsilon = 1e-5);

  const char* type() const override { return "sbn"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;
  void collect_params(std::vector<ParamRef<S>>& out) override;

  std::size_t channels() const { return gamma.dim(0); }
  double epsilon() const { return eps_; }

  bool has_frozen() const { return has_frozen_; }
  /// Installs inference statistics; variance must be non-negative per channel.
  void set_frozen(const TensorT<S>& mean, const TensorT<S>& variance);
  void clear_frozen();
  const TensorT<S>& frozen_mean() const;
  const TensorT<S>& frozen_variance() const;

  TensorT<S> gamma, beta;  // [channels]
  TensorT<S> grad_gamma, grad_beta;

 private:
  double eps_;
  bool has_frozen_ = false;
  TensorT<S> frozen_mean_, frozen_var_;

  // train-mode cache
  TensorT<S> xhat_;
  std::vector<double> inv_std_;
  std::size_t reduce_count_ = 0;
  bool has_cache_ = false;
};

/// Multiplies activations by a fixed factor during training so subnetworks
/// of different widths produce comparably scaled representations; identity
/// at inference.
template <class S>
class ScalerLayer final : public Layer<S> {
 public:
  ScalerLayer(std::string name, double factor);

  const char* type() const override { return "scaler"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;

  double factor() const { return factor_; }

 private:
  double factor_;
};

template <class S>
class ReluLayer final : public Layer<S> {
 public:
  explicit ReluLayer(std::string name) : Layer<S>(std::move(name)) {}

  const char* type() const override { return "relu"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;

 private:
  TensorT<S> cached_input_;
  bool has_cache_ = false;
};

template <class S>
class MaxPool2dLayer final : public Layer<S> {
 public:
  MaxPool2dLayer(std::string name, std::size_t kernel, std::size_t stride);

  const char* type() const override { return "maxpool"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;

  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }

 private:
  std::size_t kernel_, stride_;
  std::vector<std::size_t> in_shape_;
  std::vector<std::uint32_t> argmax_;  // flat input offset per output element
  bool has_cache_ = false;
};

template <class S>
class GlobalAvgPoolLayer final : public Layer<S> {
 public:
  explicit GlobalAvgPoolLayer(std::string name) : Layer<S>(std::move(name)) {}

  const char* type() const override { return "gap"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;

 private:
  std::vector<std::size_t> in_shape_;
  bool has_cache_ = false;
};

template <class S>
class FlattenLayer final : public Layer<S> {
 public:
  explicit FlattenLayer(std::string name) : Layer<S>(std::move(name)) {}

  const char* type() const override { return "flatten"; }
  TensorT<S> forward(const TensorT<S>& x, Mode mode) override;
  TensorT<S> backward(const TensorT<S>& dy) override;

 private:
  std::vector<std::size_t> in_shape_;
};

/// Frozen statistics of one sBN layer, keyed by the layer name.
template <class S>
struct SbnSnapshot {
  std::string layer;
  TensorT<S> mean;
  TensorT<S> variance;
};

/// An ordered stack of layers with named parameters.
template <class S>
class Model {
 public:
  Model() = default;

  void append(std::unique_ptr<Layer<S>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t layer_count() const { return layers_.size(); }
  Layer<S>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<S>& layer(std::size_t i) const { return *layers_[i]; }

  TensorT<S> forward(const TensorT<S>& batch, Mode mode);
  /// Runs layers [0, end) only; used by the sBN finalization passes.
  TensorT<S> forward_prefix(const TensorT<S>& batch, std::size_t end, Mode mode) const;

  /// Propagates the logits gradient; requires a preceding train-mode forward.
  void backward(const TensorT<S>& dlogits);

  std::vector<ParamRef<S>> params();
  void zero_grad();

  std::vector<std::pair<std::string, TensorT<S>>> harvest_params();
  /// Installs values by name; every model parameter must be covered and
  /// shapes must match exactly.
  void load_params(std::span<const std::pair<std::string, TensorT<S>>> named);

  std::vector<SbnLayer<S>*> sbn_layers();
  std::vector<SbnSnapshot<S>> harvest_sbn_stats();
  void install_sbn_stats(std::span<const SbnSnapshot<S>> stats);

 private:
  std::vector<std::unique_ptr<Layer<S>>> layers_;
  bool ready_for_backward_ = false;
};

/// Streams the replayable batch source through the model once per sBN layer,
/// freezing layers front to back, so every layer's statistics are exact
/// moments of its inference-time pre-normalization activations and do not
/// depend on how the stream is batched. `replay(sink)` must deliver the same
/// batches on every invocation. Per-batch moments may be computed on
/// `threads` workers; the merge itself stays in stream order, so the result
/// is identical at any thread count.
template <class S>
void finalize_sbn_statistics(
    Model<S>& model,
    const std::function<void(const std::function<void(const TensorT<S>&)>&)>& replay,
    unsigned threads = 1);

}  // namespace heterofl::nn
