#include "heterofl/hetero.hpp"

#include <cmath>
#include <stdexcept>

namespace heterofl::agg {

template <class S>
const TensorT<S>* GlobalModelT<S>::find(const std::string& name) const {
  for (const auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

template <class S>
TensorT<S>* GlobalModelT<S>::find(const std::string& name) {
  for (auto& [n, t] : params)
    if (n == name) return &t;
  return nullptr;
}

const ParamSlice* SliceSpec::find(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return &p;
  return nullptr;
}

SliceSpec derive_slices(const zoo::ModelSpec& spec, const zoo::LevelSpec& level) {
  const auto global_shapes = zoo::param_shapes(spec, zoo::LevelSpec{'a', 1, level.shrink});
  const auto local_shapes = zoo::param_shapes(spec, level);
  if (global_shapes.size() != local_shapes.size()) {
    throw std::logic_error("derive_slices: level changes the parameter set");
  }
  SliceSpec out;
  out.classifier_weight = zoo::classifier_name(spec) + ".weight";
  out.classifier_bias = zoo::classifier_name(spec) + ".bias";
  for (std::size_t i = 0; i < global_shapes.size(); ++i) {
    const auto& [name, gshape] = global_shapes[i];
    const auto& lshape = local_shapes[i].second;
    if (local_shapes[i].first != name || lshape.size() != gshape.size()) {
      throw std::logic_error("derive_slices: parameter tables out of step at " + name);
    }
    ParamSlice slice{name, {}};
    for (std::size_t axis = 0; axis < gshape.size(); ++axis) {
      if (lshape[axis] > gshape[axis]) {
        throw std::logic_error("derive_slices: local shape exceeds global on axis " +
                               std::to_string(axis) + " of " + name);
      }
      slice.ranges.push_back(AxisRange{0, lshape[axis]});
    }
    out.params.push_back(std::move(slice));
  }
  return out;
}

template <class S>
std::vector<std::pair<std::string, TensorT<S>>> extract_local(const GlobalModelT<S>& gm,
                                                              const SliceSpec& slices) {
  std::vector<std::pair<std::string, TensorT<S>>> out;
  out.reserve(slices.params.size());
  for (const auto& slice : slices.params) {
    const TensorT<S>* global = gm.find(slice.name);
    if (!global) throw std::invalid_argument("extract_local: global model has no " + slice.name);
    out.emplace_back(slice.name, global->slice_read(slice.ranges));
  }
  return out;
}

template <class S>
AggregationAccumulator<S>::AggregationAccumulator(const GlobalModelT<S>& gm) {
  entries_.reserve(gm.params.size());
  for (const auto& [name, tensor] : gm.params) {
    entries_.push_back(Entry{name, TensorT<S>(tensor.shape()),
                             std::vector<std::uint32_t>(tensor.size(), 0)});
  }
}

template <class S>
const typename AggregationAccumulator<S>::Entry& AggregationAccumulator<S>::entry(
    const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e;
  throw std::invalid_argument("aggregation accumulator has no parameter " + name);
}

template <class S>
const TensorT<S>& AggregationAccumulator<S>::sum(const std::string& name) const {
  return entry(name).sum;
}

template <class S>
const std::vector<std::uint32_t>& AggregationAccumulator<S>::count(const std::string& name) const {
  return entry(name).count;
}

template <class S>
void AggregationAccumulator<S>::accumulate(
    std::span<const std::pair<std::string, TensorT<S>>> client_params, const SliceSpec& slices,
    const std::optional<std::set<std::int32_t>>& classifier_mask) {
  if (client_params.size() != entries_.size()) {
    throw std::invalid_argument("accumulate: expected " + std::to_string(entries_.size()) +
                                " parameters, got " + std::to_string(client_params.size()));
  }
  for (auto& e : entries_) {
    const ParamSlice* slice = slices.find(e.name);
    if (!slice) throw std::invalid_argument("accumulate: slice spec has no " + e.name);

    const TensorT<S>* client = nullptr;
    for (const auto& [name, tensor] : client_params) {
      if (name == e.name) {
        client = &tensor;
        break;
      }
    }
    if (!client) throw std::invalid_argument("accumulate: client params have no " + e.name);

    const auto& gshape = e.sum.shape();
    if (slice->ranges.size() != gshape.size() || client->rank() != gshape.size()) {
      throw std::invalid_argument("accumulate: rank mismatch for " + e.name);
    }
    for (std::size_t axis = 0; axis < gshape.size(); ++axis) {
      if (slice->ranges[axis].begin != 0 || slice->ranges[axis].end > gshape[axis]) {
        throw std::invalid_argument("accumulate: slice out of bounds on axis " +
                                    std::to_string(axis) + " of " + e.name);
      }
      if (client->dim(axis) != slice->ranges[axis].length()) {
        throw std::invalid_argument("accumulate: client shape does not match slice of " + e.name);
      }
    }

    const bool mask_rows =
        classifier_mask && (e.name == slices.classifier_weight || e.name == slices.classifier_bias);
    const std::size_t rank = gshape.size();
    const std::size_t run = slice->ranges[rank - 1].length();
    const S* src = client->data();

    if (rank == 1) {
      // Bias-style vector: axis 0 doubles as the class axis for the
      // classifier bias, so the mask applies per element.
      for (std::size_t j = 0; j < run; ++j) {
        if (mask_rows && classifier_mask->count(static_cast<std::int32_t>(j)) == 0) continue;
        e.sum[j] += src[j];
        e.count[j] += 1;
      }
      continue;
    }

    // Walk the covered region row by row; class rows live on axis 0.
    std::vector<std::size_t> gstride(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) gstride[i - 1] = gstride[i] * gshape[i];
    std::vector<std::size_t> idx(rank, 0);
    for (;;) {
      const bool skip =
          mask_rows && classifier_mask->count(static_cast<std::int32_t>(idx[0])) == 0;
      if (!skip) {
        std::size_t off = 0;
        for (std::size_t i = 0; i + 1 < rank; ++i) off += idx[i] * gstride[i];
        for (std::size_t j = 0; j < run; ++j) {
          e.sum[off + j] += src[j];
          e.count[off + j] += 1;
        }
      }
      src += run;

      std::size_t axis = rank - 1;
      bool done = false;
      while (axis > 0) {
        --axis;
        if (++idx[axis] < slice->ranges[axis].length()) break;
        idx[axis] = 0;
        if (axis == 0) done = true;
      }
      if (done) break;
    }
  }
  ++clients_;
}

template <class S>
void AggregationAccumulator<S>::commit(GlobalModelT<S>& gm) const {
  if (gm.params.size() != entries_.size()) {
    throw std::invalid_argument("commit: global model parameter count changed");
  }
  for (const auto& e : entries_) {
    TensorT<S>* global = gm.find(e.name);
    if (!global || !(global->shape() == e.sum.shape())) {
      throw std::invalid_argument("commit: global model incompatible with accumulator at " + e.name);
    }
    for (std::size_t i = 0; i < e.count.size(); ++i) {
      if (e.count[i] == 0) continue;  // no covering client: retain previous value
      const S v = e.sum[i] / static_cast<S>(e.count[i]);
      if (!std::isfinite(static_cast<double>(v))) {
        throw std::runtime_error("commit: non-finite aggregate in " + e.name);
      }
      (*global)[i] = v;
    }
  }
  ++gm.round;
}

#define HETEROFL_AGG_INSTANTIATE(S)                                                     \
  template struct GlobalModelT<S>;                                                      \
  template std::vector<std::pair<std::string, TensorT<S>>> extract_local(               \
      const GlobalModelT<S>&, const SliceSpec&);                                        \
  template class AggregationAccumulator<S>;

HETEROFL_AGG_INSTANTIATE(float)
HETEROFL_AGG_INSTANTIATE(double)
#undef HETEROFL_AGG_INSTANTIATE

}  // namespace heterofl::agg
