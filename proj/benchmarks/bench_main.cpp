#include <random>

#include <benchmark/benchmark.h>

#include "cvflow/filters.hpp"
#include "cvflow/predictors.hpp"
#include "cvflow/runner.hpp"

using namespace cvflow;

namespace {

std::vector<double> noisy_walk(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> z(n);
  double x = 10.0;
  for (double& v : z) v = (x += 0.1 * g(rng)) + g(rng);
  return z;
}

}  // namespace

static void BM_LstmStep(benchmark::State& state) {
  const auto h = static_cast<int>(state.range(0));
  const auto w = RnnWeights::glorot(Arch::lstm, h, 3);
  auto s = CellState::zeros(Arch::lstm, h);
  double x = 0.3;
  for (auto _ : state) {
    s = cell_forward(x, s, w);
    benchmark::DoNotOptimize(readout(w, s.h));
    x = 1.0 - x;
  }
}
BENCHMARK(BM_LstmStep)->Arg(32)->Arg(100);

static void BM_TrainEpoch(benchmark::State& state) {
  std::vector<double> v(7000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.5 + 0.3 * std::sin(0.01 * static_cast<double>(i));
  const SupervisedSet set{v, 1};
  Hyperparams hp;
  hp.epochs = 1;
  hp.neurons = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_rnn(set, Arch::lstm, hp).weights);
}
BENCHMARK(BM_TrainEpoch)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_KalmanRts(benchmark::State& state) {
  const auto z = noisy_walk(static_cast<std::size_t>(state.range(0)));
  FilterParams p;
  p.q = 0.01;
  p.x0 = z[0];
  for (auto _ : state) benchmark::DoNotOptimize(rts_smooth(kalman_forward(z, p), p).smooth_x);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KalmanRts)->Arg(9800);

static void BM_FixedLagPush(benchmark::State& state) {
  const auto z = noisy_walk(4096);
  FilterParams p;
  p.q = 0.01;
  p.x0 = z[0];
  FixedLagSmoother sm(p, static_cast<int>(state.range(0)));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sm.push(z[i++ & 4095]));
}
BENCHMARK(BM_FixedLagPush)->Arg(0)->Arg(20);

static void BM_ReplayStep(benchmark::State& state) {
  Hyperparams hp;
  const RnnModel model{RnnWeights::glorot(Arch::lstm, 100, 5), hp, {0.0, 20.0}, {}, {}};
  FilterParams p;
  p.q = 0.01;
  p.x0 = 10.0;
  TimeSeries s;
  s.values = noisy_walk(2800);
  for (auto _ : state) {
    const auto rep = replay_realtime(model, p, s, {20, false, 10.0});
    state.counters["max_us"] = rep.max_us;
    state.counters["mean_us"] = rep.mean_us;
  }
}
BENCHMARK(BM_ReplayStep)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
