#include "heterofl/model_zoo.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace heterofl::zoo {

std::vector<LevelSpec> make_levels(double shrink, int count) {
  if (!(shrink > 0.0) || shrink > 1.0) {
    throw std::invalid_argument("make_levels: shrink ratio must lie in (0, 1]");
  }
  if (count < 1 || count > 26) throw std::invalid_argument("make_levels: count must be in [1, 26]");
  std::vector<LevelSpec> levels;
  for (int i = 0; i < count; ++i) {
    levels.push_back(LevelSpec{static_cast<char>('a' + i), i + 1, shrink});
  }
  return levels;
}

std::size_t scaled_width(std::size_t base, double width_factor) {
  if (!(width_factor > 0.0)) throw std::invalid_argument("scaled_width: factor must be positive");
  const auto w = static_cast<std::size_t>(std::ceil(static_cast<double>(base) * width_factor));
  if (w == 0) {
    throw std::invalid_argument("scaled_width: width " + std::to_string(base) +
                                " scaled to zero by factor " + std::to_string(width_factor));
  }
  return std::min(w, base);
}

std::vector<std::size_t> level_widths(const ModelSpec& spec, const LevelSpec& level) {
  if (spec.base_hidden.empty()) throw std::invalid_argument("model spec has no hidden widths");
  const double f = level.width_factor();
  std::vector<std::size_t> widths;
  widths.reserve(spec.base_hidden.size());
  for (std::size_t w : spec.base_hidden) widths.push_back(scaled_width(w, f));
  return widths;
}

namespace {

struct PlanLayer {
  enum Kind { conv, linear, sbn, scaler, relu, maxpool, gap, flatten } kind;
  std::string name;
  std::size_t in = 0, out = 0;
  std::size_t kernel = 0, stride = 0, pad = 0;
};

void validate_spec(const ModelSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("model spec: num_classes must be >= 2");
  if (spec.base_hidden.empty()) throw std::invalid_argument("model spec: base_hidden is empty");
  if (spec.arch == Architecture::cnn && spec.input_shape.size() != 3) {
    throw std::invalid_argument("model spec: cnn input shape must be {channels, height, width}");
  }
  if (spec.input_shape.empty()) throw std::invalid_argument("model spec: input shape is empty");
}

std::vector<PlanLayer> make_plan(const ModelSpec& spec, const LevelSpec& level, double scaler_factor) {
  validate_spec(spec);
  const auto widths = level_widths(spec, level);
  std::vector<PlanLayer> plan;

  if (spec.arch == Architecture::cnn) {
    std::size_t prev = spec.input_shape[0];  // input channels never shrink
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::string idx = std::to_string(i + 1);
      plan.push_back({PlanLayer::conv, "conv" + idx, prev, widths[i], 3, 1, 1});
      plan.push_back({PlanLayer::scaler, "scaler" + idx, 0, 0, 0, 0, 0});
      plan.push_back({PlanLayer::sbn, "sbn" + idx, 0, widths[i], 0, 0, 0});
      plan.push_back({PlanLayer::relu, "relu" + idx, 0, 0, 0, 0, 0});
      plan.push_back({PlanLayer::maxpool, "pool" + idx, 0, 0, 2, 2, 0});
      prev = widths[i];
    }
    plan.push_back({PlanLayer::gap, "gap", 0, 0, 0, 0, 0});
    plan.push_back({PlanLayer::linear, "classifier", prev, spec.num_classes, 0, 0, 0});
  } else {
    std::size_t prev = 1;
    for (std::size_t d : spec.input_shape) prev *= d;  // input features never shrink
    plan.push_back({PlanLayer::flatten, "flatten", 0, 0, 0, 0, 0});
    for (std::size_t i = 0; i < widths.size(); ++i) {
      const std::string idx = std::to_string(i + 1);
      plan.push_back({PlanLayer::linear, "fc" + idx, prev, widths[i], 0, 0, 0});
      plan.push_back({PlanLayer::scaler, "scaler" + idx, 0, 0, 0, 0, 0});
      plan.push_back({PlanLayer::sbn, "sbn" + idx, 0, widths[i], 0, 0, 0});
      plan.push_back({PlanLayer::relu, "relu" + idx, 0, 0, 0, 0, 0});
      prev = widths[i];
    }
    plan.push_back({PlanLayer::linear, "classifier", prev, spec.num_classes, 0, 0, 0});
  }
  (void)scaler_factor;
  return plan;
}

}  // namespace

std::vector<std::pair<std::string, std::vector<std::size_t>>> param_shapes(
    const ModelSpec& spec, const LevelSpec& level) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> out;
  for (const auto& layer : make_plan(spec, level, 1.0)) {
    switch (layer.kind) {
      case PlanLayer::conv:
        out.emplace_back(layer.name + ".weight",
                         std::vector<std::size_t>{layer.out, layer.in, layer.kernel, layer.kernel});
        out.emplace_back(layer.name + ".bias", std::vector<std::size_t>{layer.out});
        break;
      case PlanLayer::linear:
        out.emplace_back(layer.name + ".weight", std::vector<std::size_t>{layer.out, layer.in});
        out.emplace_back(layer.name + ".bias", std::vector<std::size_t>{layer.out});
        break;
      case PlanLayer::sbn:
        out.emplace_back(layer.name + ".gamma", std::vector<std::size_t>{layer.out});
        out.emplace_back(layer.name + ".beta", std::vector<std::size_t>{layer.out});
        break;
      default:
        break;
    }
  }
  return out;
}

std::string classifier_name(const ModelSpec& spec) {
  (void)spec;
  return "classifier";
}

template <class S>
nn::Model<S> build_model(const ModelSpec& spec, const LevelSpec& level, Rng* init,
                         const LevelSpec* serving) {
  double factor = 1.0 / level.width_factor();
  if (serving) {
    if (serving->p > level.p) {
      throw std::invalid_argument("build_model: serving level must not exceed the client level");
    }
    factor = serving->width_factor() / level.width_factor();
  }

  nn::Model<S> model;
  for (const auto& l : make_plan(spec, level, factor)) {
    switch (l.kind) {
      case PlanLayer::conv: {
        auto layer = std::make_unique<nn::Conv2dLayer<S>>(l.name, l.in, l.out, l.kernel, l.stride,
                                                          l.pad);
        if (init) {
          const double std_dev = std::sqrt(2.0 / static_cast<double>(l.in * l.kernel * l.kernel));
          for (auto& v : layer->weight.values()) v = static_cast<S>(init->normal() * std_dev);
        }
        model.append(std::move(layer));
        break;
      }
      case PlanLayer::linear: {
        auto layer = std::make_unique<nn::LinearLayer<S>>(l.name, l.in, l.out);
        if (init) {
          const double std_dev = std::sqrt(2.0 / static_cast<double>(l.in));
          for (auto& v : layer->weight.values()) v = static_cast<S>(init->normal() * std_dev);
        }
        model.append(std::move(layer));
        break;
      }
      case PlanLayer::sbn:
        model.append(std::make_unique<nn::SbnLayer<S>>(l.name, l.out));
        break;
      case PlanLayer::scaler:
        model.append(std::make_unique<nn::ScalerLayer<S>>(l.name, factor));
        break;
      case PlanLayer::relu:
        model.append(std::make_unique<nn::ReluLayer<S>>(l.name));
        break;
      case PlanLayer::maxpool:
        model.append(std::make_unique<nn::MaxPool2dLayer<S>>(l.name, l.kernel, l.stride));
        break;
      case PlanLayer::gap:
        model.append(std::make_unique<nn::GlobalAvgPoolLayer<S>>(l.name));
        break;
      case PlanLayer::flatten:
        model.append(std::make_unique<nn::FlattenLayer<S>>(l.name));
        break;
    }
  }
  return model;
}

std::uint64_t count_params(const ModelSpec& spec, const LevelSpec& level) {
  std::uint64_t total = 0;
  for (const auto& [name, shape] : param_shapes(spec, level)) {
    (void)name;
    std::uint64_t n = 1;
    for (std::size_t d : shape) n *= d;
    total += n;
  }
  return total;
}

std::uint64_t count_flops(const ModelSpec& spec, const LevelSpec& level) {
  std::uint64_t macs = 0;
  std::size_t h = 0, w = 0;
  if (spec.arch == Architecture::cnn) {
    h = spec.input_shape[1];
    w = spec.input_shape[2];
  }
  for (const auto& l : make_plan(spec, level, 1.0)) {
    switch (l.kind) {
      case PlanLayer::conv: {
        const std::size_t oh = (h + 2 * l.pad - l.kernel) / l.stride + 1;
        const std::size_t ow = (w + 2 * l.pad - l.kernel) / l.stride + 1;
        macs += static_cast<std::uint64_t>(oh) * ow * l.out * l.in * l.kernel * l.kernel;
        h = oh;
        w = ow;
        break;
      }
      case PlanLayer::maxpool:
        h = (h - l.kernel) / l.stride + 1;
        w = (w - l.kernel) / l.stride + 1;
        break;
      case PlanLayer::linear:
        macs += static_cast<std::uint64_t>(l.out) * l.in;
        break;
      default:
        break;
    }
  }
  return 2 * macs;
}

double average_params(const ModelSpec& spec, const std::vector<LevelSpec>& levels,
                      const std::vector<double>& proportions) {
  if (levels.size() != proportions.size()) {
    throw std::invalid_argument("average_params: levels and proportions differ in length");
  }
  double sum = 0.0, total = 0.0;
  for (double p : proportions) {
    if (p < 0.0) throw std::invalid_argument("average_params: proportions must be >= 0");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("average_params: proportions must sum to 1");
  }
  for (std::size_t i = 0; i < levels.size(); ++i) {
    sum += proportions[i] * static_cast<double>(count_params(spec, levels[i]));
  }
  return sum;
}

template nn::Model<float> build_model(const ModelSpec&, const LevelSpec&, Rng*, const LevelSpec*);
template nn::Model<double> build_model(const ModelSpec&, const LevelSpec&, Rng*, const LevelSpec*);

}  // namespace heterofl::zoo
