#pragma once

// Independent reference implementations the tests compare against. Everything
// here is deliberately written the slow, obvious way and shares no code with
// the paths under test.

#include <functional>
#include <optional>
#include <set>
#include <vector>

#include "heterofl/federation.hpp"
#include "heterofl/hetero.hpp"
#include "heterofl/nn/layers.hpp"
#include "heterofl/rng.hpp"
#include "heterofl/tensor.hpp"

namespace oracles {

using heterofl::AxisRange;
using heterofl::Tensor;

/// Element-by-element slice copy driven by explicit multi-indices.
Tensor slice_read_loop(const Tensor& t, const std::vector<AxisRange>& ranges);

/// Element-by-element slice write.
Tensor slice_write_loop(const Tensor& t, const std::vector<AxisRange>& ranges, const Tensor& src);

/// Triple-loop matrix product.
Tensor matmul_loop(const Tensor& a, const Tensor& b);

/// Direct seven-loop convolution (zero padding, square kernel).
Tensor conv2d_loop(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride,
                   std::size_t pad);

/// Random tensor with standard-normal entries.
Tensor random_tensor(std::vector<std::size_t> shape, heterofl::Rng& rng);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t values_checked = 0;
};

/// Central finite differences (step h) on a single layer. The scalar loss is
/// sum(c .* layer(x)) for random fixed c; both the input gradient and every
/// parameter gradient are compared. Relative error uses a small magnitude
/// floor so exactly-zero gradients compare cleanly.
GradCheckReport layer_grad_check(heterofl::nn::Layer<double>& layer, const Tensor& x,
                                 heterofl::Rng& rng, double step = 1e-5);

/// Central finite differences on every parameter of a model under softmax
/// cross-entropy against fixed labels.
GradCheckReport model_grad_check(heterofl::nn::Model<double>& model, const Tensor& batch,
                                 const std::vector<std::int32_t>& labels, double step = 1e-5);

/// Smallest distance of any relu pre-activation from zero and of any pooling
/// window's top two values from each other, under a train-mode forward.
/// Central differences are only valid when this margin exceeds the step, so
/// the gradcheck tests skip draws whose margin is too small.
double min_kink_margin(heterofl::nn::Model<double>& model, const Tensor& batch);

/// One client's contribution for the brute-force aggregation oracle.
struct OracleClient {
  std::vector<std::pair<std::string, Tensor>> params;
  heterofl::agg::SliceSpec slices;
  std::optional<std::set<std::int32_t>> mask;
};

/// Per-element covering-clients average, identical summation order to the
/// canonical accumulator (clients in the given order), zero-coverage elements
/// keep the previous global value.
heterofl::agg::GlobalModel brute_force_aggregate(const heterofl::agg::GlobalModel& gm,
                                                 const std::vector<OracleClient>& clients);

/// Plain FedAvg loop sharing the simulator's kernel and RNG streams: every
/// client trains the full model and the global becomes the element-wise mean
/// over the round's active set. `on_round` sees the global after each round.
void fedavg_reference(const heterofl::fed::FederationConfig& cfg,
                      const heterofl::zoo::ModelSpec& spec,
                      const heterofl::data::DatasetT<double>& train,
                      const heterofl::data::Partition& partition,
                      const std::function<void(std::uint32_t, const heterofl::agg::GlobalModel&)>&
                          on_round);

}  // namespace oracles
