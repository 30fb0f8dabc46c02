#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "heterofl/model_zoo.hpp"
#include "heterofl/nn/layers.hpp"
#include "heterofl/tensor.hpp"

namespace heterofl::agg {

/// The single global inference artifact: named parameter tensors (full p=1
/// shapes), the round counter and, once finalization has run, frozen sBN
/// statistics.
template <class S>
struct GlobalModelT {
  std::vector<std::pair<std::string, TensorT<S>>> params;  // canonical build order
  std::vector<nn::SbnSnapshot<S>> sbn_stats;               // empty until finalized
  std::uint64_t round = 0;

  const TensorT<S>* find(const std::string& name) const;
  TensorT<S>* find(const std::string& name);
};

using GlobalModel = GlobalModelT<double>;

/// Per-parameter upper-left index ranges selected by one complexity level.
struct ParamSlice {
  std::string name;
  std::vector<AxisRange> ranges;  // all ranges start at 0
};

struct SliceSpec {
  std::vector<ParamSlice> params;    // canonical order, one entry per parameter
  std::string classifier_weight;     // weight whose axis 0 indexes classes
  std::string classifier_bias;       // its bias, axis 0 indexes classes

  const ParamSlice* find(const std::string& name) const;
};

/// Ranges of the level's subnetwork inside the global model: every axis is
/// the prefix [0, level width); first-layer input channels and classifier
/// class rows stay full.
SliceSpec derive_slices(const zoo::ModelSpec& spec, const zoo::LevelSpec& level);

/// Independent dense copies of the global tensors restricted to the slice.
template <class S>
std::vector<std::pair<std::string, TensorT<S>>> extract_local(const GlobalModelT<S>& gm,
                                                              const SliceSpec& slices);

/// Element-wise sum and coverage-count accumulator realizing the disjoint
/// union aggregation: after commit, every element equals the average over
/// exactly the clients whose slice covered it.
template <class S>
class AggregationAccumulator {
 public:
  explicit AggregationAccumulator(const GlobalModelT<S>& gm);

  /// Adds one client's trained parameters. When `classifier_mask` is given,
  /// classifier weight rows and bias entries for classes outside the mask
  /// contribute neither sum nor count (their slices stay untrained locally).
  void accumulate(std::span<const std::pair<std::string, TensorT<S>>> client_params,
                  const SliceSpec& slices,
                  const std::optional<std::set<std::int32_t>>& classifier_mask = std::nullopt);

  /// Installs averaged values where coverage is positive, keeps the previous
  /// global value elsewhere, and advances the round counter. Throws on
  /// non-finite results.
  void commit(GlobalModelT<S>& gm) const;

  std::size_t clients_accumulated() const { return clients_; }
  const TensorT<S>& sum(const std::string& name) const;
  const std::vector<std::uint32_t>& count(const std::string& name) const;

 private:
  struct Entry {
    std::string name;
    TensorT<S> sum;
    std::vector<std::uint32_t> count;
  };
  const Entry& entry(const std::string& name) const;

  std::vector<Entry> entries_;
  std::size_t clients_ = 0;
};

enum class ScalarKind : std::uint8_t { f64 = 0, f32 = 1 };

/// Self-describing binary checkpoint (little-endian): parameter name -> shape
/// -> raw values, plus round number and frozen sBN statistics. Round trips
/// bit-exactly.
template <class S>
void save_checkpoint(const std::string& path, const GlobalModelT<S>& gm);

ScalarKind checkpoint_scalar_kind(const std::string& path);

template <class S>
GlobalModelT<S> load_checkpoint(const std::string& path);

}  // namespace heterofl::agg
