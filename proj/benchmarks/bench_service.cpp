#include <benchmark/benchmark.h>

#include <filesystem>

#include "peloton/domain.hpp"
#include "peloton/service.hpp"

using namespace peloton;

namespace {

ForecastService& service() {
  static ForecastService* s = [] {
    const auto dir = std::filesystem::temp_directory_path() / "peloton_bench_service";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    ServiceConfig c;
    c.artifact_dir = dir / "artifacts";
    c.adjustments_log = dir / "adjustments.ndjson";
    c.forecast_log = dir / "forecasts.ndjson";
    TrainOptions o;
    o.method_defaults.base_spec.tree_count = 50;
    o.point_spec.tree_count = 50;
    auto* svc = new ForecastService(c);
    svc->set_artifacts(train_target(generate_synthetic(436, TargetKind::speed, 7), o),
                       train_target(generate_synthetic(1446, TargetKind::power, 7), o));
    return svc;
  }();
  return *s;
}

ForecastRequest request(double days) {
  ForecastRequest r;
  auto& s = r.stage;
  s.race_name = "Bench Stage";
  s.race_date = "2024-07-04";
  s.race_type = RaceType::grand_tour;
  s.distance = 180.0;
  s.ascent = 2100.0;
  s.descent = 1900.0;
  s.rider_name = "Rider A";
  s.bmi = 21.0;
  s.rider_role = RiderRole::helper;
  s.temperature = 24.0;
  s.humidity = 0.55;
  s.neg_wind_effect = 2.5;
  r.days_ahead = days;
  return r;
}

}  // namespace

static void BM_Forecast(benchmark::State& state) {
  auto& s = service();
  const auto r = request(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(s.forecast(r));
}
BENCHMARK(BM_Forecast)->Arg(0)->Arg(8);

static void BM_ForecastRoute(benchmark::State& state) {
  auto& s = service();
  const auto body = to_json(request(3.0));
  for (auto _ : state) benchmark::DoNotOptimize(handle_request(s, "POST", "/v1/forecast", {}, body));
}
BENCHMARK(BM_ForecastRoute);

static void BM_EnergyBounds(benchmark::State& state) {
  const PredictionInterval speed(36.5, 44.2, 0.1, Method::icp);
  const PredictionInterval power(225.6, 285.8, 0.1, Method::icp);
  for (auto _ : state) benchmark::DoNotOptimize(energy_bounds(180.0, speed, power));
}
BENCHMARK(BM_EnergyBounds);

BENCHMARK_MAIN();
