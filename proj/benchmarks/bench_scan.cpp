#include <benchmark/benchmark.h>

#include <random>

#include "hsimamba/autodiff.hpp"
#include "hsimamba/model.hpp"
#include "hsimamba/routes.hpp"
#include "hsimamba/ssm.hpp"

using namespace hsimamba;

static void BM_SelectiveScan(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(0);
  const auto p = ssm::S6Params::init(32, 16, rng);
  const Tensor x = Tensor::uniform({L, 32}, -1, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(ssm::s6_selective_scan(x, p));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_SelectiveScan)->RangeMultiplier(2)->Range(256, 4096)->Complexity(benchmark::oN);

static void BM_RecurrenceVsConv(benchmark::State& state) {
  const auto L = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1), a(-2, -0.1);
  ssm::LtiSsm s;
  for (int i = 0; i < 16; ++i) {
    s.a_diag.push_back(a(rng));
    s.b.push_back(u(rng));
    s.c.push_back(u(rng));
  }
  s.delta = 0.1;
  const auto d = ssm::discretize_zoh(s);
  std::vector<double> x(L);
  for (double& v : x) v = u(rng);
  const bool conv = state.range(1) != 0;
  const auto k = ssm::ssm_conv_kernel(d, L);
  for (auto _ : state) {
    if (conv)
      benchmark::DoNotOptimize(ssm::ssm_conv_apply(x, k));
    else
      benchmark::DoNotOptimize(ssm::ssm_recurrence(d, x));
  }
  state.SetLabel(conv ? "convolution" : "recurrence");
}
BENCHMARK(BM_RecurrenceVsConv)->ArgsProduct({{256, 1024}, {0, 1}});

static void BM_ScanAndMerge(benchmark::State& state) {
  const auto route = routes::route_from_number(static_cast<int>(state.range(0)));
  std::mt19937_64 rng(2);
  const std::size_t M = 8;
  std::vector<ssm::S6Params> s6;
  for (std::size_t b = 0; b < routes::branch_count(route); ++b) s6.push_back(ssm::S6Params::init(M, 4, rng));
  const routes::TokenBatch tokens(Tensor::uniform({M, 7, 7, 6}, -1, 1, rng));
  for (auto _ : state) benchmark::DoNotOptimize(routes::scan_and_merge(tokens, route, s6));
  state.SetLabel(std::string(routes::route_name(route)));
}
BENCHMARK(BM_ScanAndMerge)->DenseRange(1, 5);

static void BM_TrainStep(benchmark::State& state) {
  model::ModelConfig c;
  c.patch_size = 9;
  c.bands = 8;
  c.embed_dim = 8;
  c.state_size = 4;
  c.num_classes = 3;
  model::Model m = model::Model::init(c, 0);
  std::mt19937_64 rng(3);
  std::vector<Tensor> patches;
  for (int i = 0; i < 16; ++i) patches.push_back(Tensor::uniform({9, 9, 8}, -1, 1, rng));
  const Tensor input = model::make_input(patches);
  const std::vector<int> labels(16, 1);
  for (auto _ : state) {
    ad::Tape tape;
    const auto loss = ad::softmax_cross_entropy(m.forward(tape, input, true), labels);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.parameter_grads());
  }
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
