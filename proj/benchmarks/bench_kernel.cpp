#include <benchmark/benchmark.h>

#include "heterofl/nn/layers.hpp"
#include "heterofl/rng.hpp"
#include "heterofl/tensor.hpp"

namespace {

using heterofl::Rng;

template <class S>
heterofl::TensorT<S> random_tensor(std::vector<std::size_t> shape, Rng& rng) {
  heterofl::TensorT<S> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<S>(rng.normal());
  return t;
}

// GEMM shapes taken from the reference CNN's im2col products at batch 10.
template <class S>
void BM_GemmNN(benchmark::State& state) {
  const std::size_t m = state.range(0), k = state.range(1), n = state.range(2);
  Rng rng(1);
  std::vector<S> a(m * k), b(k * n), c(m * n);
  for (auto& v : a) v = static_cast<S>(rng.normal());
  for (auto& v : b) v = static_cast<S>(rng.normal());
  for (auto _ : state) {
    heterofl::gemm_nn(m, n, k, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * m * n * k * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}

template <class S>
void BM_ConvForward(benchmark::State& state) {
  Rng rng(2);
  heterofl::nn::Conv2dLayer<S> conv("conv", state.range(0), state.range(1), 3, 1, 1);
  for (auto& v : conv.weight.values()) v = static_cast<S>(rng.normal() * 0.05);
  const auto x = random_tensor<S>({10, static_cast<std::size_t>(state.range(0)),
                                   static_cast<std::size_t>(state.range(2)),
                                   static_cast<std::size_t>(state.range(2))},
                                  rng);
  for (auto _ : state) {
    auto y = conv.forward(x, heterofl::nn::Mode::train);
    benchmark::DoNotOptimize(y.data());
  }
}

template <class S>
void BM_ConvTrainStep(benchmark::State& state) {
  Rng rng(3);
  heterofl::nn::Conv2dLayer<S> conv("conv", state.range(0), state.range(1), 3, 1, 1);
  for (auto& v : conv.weight.values()) v = static_cast<S>(rng.normal() * 0.05);
  const auto x = random_tensor<S>({10, static_cast<std::size_t>(state.range(0)),
                                   static_cast<std::size_t>(state.range(2)),
                                   static_cast<std::size_t>(state.range(2))},
                                  rng);
  for (auto _ : state) {
    auto y = conv.forward(x, heterofl::nn::Mode::train);
    auto dx = conv.backward(y);
    benchmark::DoNotOptimize(dx.data());
  }
}

}  // namespace

BENCHMARK(BM_GemmNN<float>)->Args({128, 576, 1960})->Args({512, 2304, 90});
BENCHMARK(BM_GemmNN<double>)->Args({128, 576, 1960})->Args({512, 2304, 90});
BENCHMARK(BM_ConvForward<float>)->Args({64, 128, 14})->Args({256, 512, 3});
BENCHMARK(BM_ConvForward<double>)->Args({64, 128, 14});
BENCHMARK(BM_ConvTrainStep<float>)->Args({64, 128, 14});
BENCHMARK(BM_ConvTrainStep<double>)->Args({64, 128, 14});

BENCHMARK_MAIN();
