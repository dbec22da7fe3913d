#include <random>

#include <benchmark/benchmark.h>

#include "crtsim/census.hpp"
#include "crtsim/engine.hpp"
#include "crtsim/errors.hpp"
#include "crtsim/estimators.hpp"
#include "crtsim/glmm.hpp"
#include "crtsim/randomization.hpp"

using namespace crtsim;

namespace {

const Census& census() {
  static const Census c = generate_synthetic_census(default_profiles(), 42);
  return c;
}

const ConstrainedPool& pool(int n_per_arm) {
  static const ConstrainedPool p60 = build_pool(census(), 60, 5000, 0.2, 1, 0);
  static const ConstrainedPool p90 = build_pool(census(), 90, 5000, 0.2, 1, 0);
  return n_per_arm == 60 ? p60 : p90;
}

Scenario scenario(int n_per_arm) {
  Scenario s;
  s.n_per_arm = n_per_arm;
  s.delta = 0.15;
  s.seed = 11;
  return s;
}

// One follow-up dataset of the base case, for the estimator benchmarks.
AnalysisDataset dataset(int n_per_arm) {
  const Scenario s = scenario(n_per_arm);
  const CalibratedIntercepts calib = calibrate_intercepts(census(), s);
  Stream rng = Stream::derive({s.seed, 0, 0});
  const auto& draw = sample_from_pool(pool(n_per_arm), rng);
  return AnalysisDataset::from_followup(census(), simulate_followup(census(), draw, calib, s, rng));
}

void BM_PoolCandidate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  std::uint64_t i = 0, infeasible = 0;
  for (auto _ : state) {
    Stream rng = Stream::derive({7, i++});
    try {
      benchmark::DoNotOptimize(draw_candidate(census(), n, rng));
    } catch (const CapacityError&) {
      ++infeasible;  // the pool rejects these too
    }
  }
  state.counters["infeasible"] = benchmark::Counter(static_cast<double>(infeasible) / static_cast<double>(i));
}
BENCHMARK(BM_PoolCandidate)->Arg(60)->Arg(90);

void BM_Estimator(benchmark::State& state) {
  const auto method = static_cast<Method>(state.range(0));
  const AnalysisDataset data = dataset(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(run_method(method, data, 1.695));
  state.SetLabel(std::string(method_name(method)));
}
BENCHMARK(BM_Estimator)->ArgsProduct({{0, 1, 2}, {60, 90}});

void BM_Replicate(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const Scenario s = scenario(n);
  const CalibratedIntercepts calib = calibrate_intercepts(census(), s);
  int rep = 0;
  for (auto _ : state) benchmark::DoNotOptimize(run_replicate(s, census(), pool(n), calib, rep++));
}
BENCHMARK(BM_Replicate)->Arg(60)->Arg(90);

void BM_Calibration(benchmark::State& state) {
  Scenario s = scenario(60);
  for (auto _ : state) {
    benchmark::DoNotOptimize(calibrate_intercepts(census(), s));
    s.cer += 1e-9;  // defeat any caching
  }
}
BENCHMARK(BM_Calibration)->Unit(benchmark::kMillisecond);

void BM_VillageIcc(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(fit_random_intercept(census(), IccLevel::kVillage, static_cast<int>(state.range(0))));
  }
}
BENCHMARK(BM_VillageIcc)->Arg(21)->Arg(41)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
