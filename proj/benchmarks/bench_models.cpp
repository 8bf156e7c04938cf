#include <benchmark/benchmark.h>

#include "peloton/conformal.hpp"
#include "peloton/data.hpp"
#include "peloton/regressors.hpp"

using namespace peloton;

namespace {

struct Data {
  FeatureMatrix x;
  std::vector<double> y;
  FeatureMatrix test;
};

const Data& power_data() {
  static const Data d = [] {
    const FeatureLayout layout(TargetKind::power, true);
    const auto train = generate_synthetic(1446, TargetKind::power, 7);
    const auto test = generate_synthetic(64, TargetKind::power, 8);
    return Data{layout.encode(train), train.targets, layout.encode(test)};
  }();
  return d;
}

}  // namespace

static void BM_ForestFit(benchmark::State& state) {
  const auto& d = power_data();
  const auto spec = RegressorSpec::random_forest(1, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(Regressor::fit(spec, d.x, d.y));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForestFit)->Arg(10)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_ForestPredict(benchmark::State& state) {
  const auto& d = power_data();
  const auto r = Regressor::fit(RegressorSpec::random_forest(1, 100), d.x, d.y);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(r.predict(d.test.row(i++ % d.test.rows())));
}
BENCHMARK(BM_ForestPredict);

static void BM_QuantileBand(benchmark::State& state) {
  const auto& d = power_data();
  const auto r = Regressor::fit(RegressorSpec::quantile_forest(1, 100), d.x, d.y);
  const std::vector<double> qs{0.05, 0.95};
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(r.predict_quantiles(d.test.row(i++ % d.test.rows()), qs));
}
BENCHMARK(BM_QuantileBand);

static void BM_KnnPredict(benchmark::State& state) {
  const auto& d = power_data();
  const auto r = Regressor::fit(RegressorSpec::knn(10), d.x, d.y);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(r.predict(d.test.row(i++ % d.test.rows())));
}
BENCHMARK(BM_KnnPredict);

static void BM_Calibrate(benchmark::State& state) {
  const auto& d = power_data();
  MethodConfig c;
  c.method = all_methods()[static_cast<std::size_t>(state.range(0))];
  c.base_spec.tree_count = c.method == Method::jackknife_plus ? 10 : 100;
  state.SetLabel(std::string(to_string(c.method)));
  for (auto _ : state) benchmark::DoNotOptimize(ConformalModel::calibrate(c, d.x, d.y));
}
// jackknife+, J+aB, CV+, CQR, ICP
BENCHMARK(BM_Calibrate)->Arg(0)->Arg(2)->Arg(4)->Arg(6)->Arg(7)->Unit(benchmark::kMillisecond)->Iterations(1);

static void BM_PredictIntervals(benchmark::State& state) {
  const auto& d = power_data();
  MethodConfig c;
  c.method = all_methods()[static_cast<std::size_t>(state.range(0))];
  c.base_spec.tree_count = 20;
  const auto model = ConformalModel::calibrate(c, d.x, d.y);
  std::vector<double> alphas;
  for (int a = 1; a <= 20; ++a) alphas.push_back(a / 100.0);
  state.SetLabel(std::string(to_string(c.method)));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_intervals(d.test.row(i++ % d.test.rows()), alphas));
}
BENCHMARK(BM_PredictIntervals)->Arg(2)->Arg(4)->Arg(6)->Arg(7);

BENCHMARK_MAIN();
