#include <benchmark/benchmark.h>

#include "heterofl/federation.hpp"

namespace {

namespace fed = heterofl::fed;
namespace zoo = heterofl::zoo;
namespace data = heterofl::data;
using heterofl::Rng;

struct Fixture {
  zoo::ModelSpec spec;
  data::TrainTest<double> ds;
  data::Partition parts;
  fed::FederationConfig cfg;

  Fixture() {
    spec.arch = zoo::Architecture::mlp;
    spec.base_hidden = {64, 32};
    spec.input_shape = {20};
    spec.num_classes = 10;

    data::SyntheticSpec synth;
    synth.train_examples = 1000;
    synth.test_examples = 200;
    synth.features = 20;
    synth.classes = 10;
    synth.seed = 4;
    ds = data::make_synthetic<double>(synth);

    cfg.clients = 20;
    cfg.active_fraction = 0.25;
    cfg.local_epochs = 1;
    cfg.batch_size = 10;
    cfg.lr = 0.01;
    cfg.rounds = 1;
    cfg.levels = zoo::make_levels(0.5, 5);
    cfg.seed = 7;
    cfg.threads = 1;
    cfg.stats_batch = 200;
    parts = data::partition_iid(std::span<const std::int32_t>(ds.train.labels), cfg.clients,
                                Rng::stream(cfg.seed, "partition-iid"));
  }
};

void BM_FederationRound(benchmark::State& state) {
  Fixture fx;
  fx.cfg.threads = static_cast<unsigned>(state.range(0));
  for (auto _ : state) {
    auto rr = fed::run(fx.cfg, fx.spec, fx.ds.train, fx.ds.test, fx.parts, nullptr);
    benchmark::DoNotOptimize(rr.global.params.data());
  }
}

void BM_AggregateCommit(benchmark::State& state) {
  Fixture fx;
  heterofl::agg::GlobalModel gm;
  {
    Rng init = Rng::stream(1, "model-init");
    auto model = zoo::build_model<double>(fx.spec, {'a', 1, 0.5}, &init);
    gm.params = model.harvest_params();
  }
  const auto slices = heterofl::agg::derive_slices(fx.spec, {'a', 1, 0.5});
  const auto local = heterofl::agg::extract_local(gm, slices);
  for (auto _ : state) {
    heterofl::agg::AggregationAccumulator<double> acc(gm);
    for (int c = 0; c < 10; ++c) {
      acc.accumulate(std::span<const std::pair<std::string, heterofl::Tensor>>(local), slices);
    }
    auto copy = gm;
    acc.commit(copy);
    benchmark::DoNotOptimize(copy.params.data());
  }
}

}  // namespace

BENCHMARK(BM_FederationRound)->Arg(1)->Arg(2);
BENCHMARK(BM_AggregateCommit);

BENCHMARK_MAIN();
