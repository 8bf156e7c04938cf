#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "peloton/errors.hpp"
#include "peloton/service.hpp"

using namespace peloton;

namespace {

ServiceConfig config_in(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.artifact_dir = dir / "artifacts";
  c.adjustments_log = dir / "adjustments.ndjson";
  c.forecast_log = dir / "forecasts.ndjson";
  return c;
}

std::unique_ptr<ForecastService> ready_service(const std::filesystem::path& dir) {
  auto s = std::make_unique<ForecastService>(config_in(dir));
  const auto& a = support::small_artifacts();
  s->set_artifacts(a.speed, a.power);
  return s;
}

ForecastRequest golden_request(double days_ahead = 3.0) {
  ForecastRequest r;
  r.stage = support::golden_stage();
  r.days_ahead = days_ahead;
  r.alpha = 0.1;
  r.method = Method::icp;
  return r;
}

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 0;
}

}  // namespace

TEST(EnergyBounds, CornerEnumeration) {
  const PredictionInterval speed(24.0, 27.0, 0.1, Method::icp);
  const PredictionInterval power(213.0, 265.0, 0.1, Method::icp);
  const auto [lo, hi] = energy_bounds(160.0, speed, power);
  // Least work: lowest power over the shortest time (fastest speed), and the reverse.
  EXPECT_DOUBLE_EQ(lo, 213.0 * (160.0 / 27.0 * 60.0) * 60.0 / 1000.0);
  EXPECT_DOUBLE_EQ(hi, 265.0 * 400.0 * 60.0 / 1000.0);
  const PredictionInterval flat(250.0, 250.0, 0.1, Method::icp);
  const PredictionInterval point_speed(25.0, 25.0, 0.1, Method::icp);
  const auto [a, b] = energy_bounds(160.0, point_speed, flat);
  EXPECT_EQ(a, 5760.0);
  EXPECT_EQ(b, 5760.0);
}

TEST(Forecast, ImmediateRaceUsesWeatherModelsOnly) {
  auto s = ready_service(support::fresh_dir("svc_immediate"));
  const auto r = s->forecast(golden_request(0.0));
  EXPECT_EQ(r.weather_weight, 1.0);
  EXPECT_FALSE(r.blended);
  const auto& a = support::small_artifacts();
  const auto stage = support::golden_stage();
  const auto xw = FeatureLayout(TargetKind::speed, true).encode(engineer_inputs(stage, TargetKind::speed));
  EXPECT_EQ(r.speed_interval, a.speed.weather.at(Method::icp).predict_interval(xw, 0.1));
  EXPECT_EQ(r.speed_point, a.speed.point_weather.predict(xw));
}

TEST(Forecast, BlendsByHorizon) {
  auto s = ready_service(support::fresh_dir("svc_blend"));
  const auto& a = support::small_artifacts();
  const auto stage = support::golden_stage();
  const auto f = engineer_inputs(stage, TargetKind::power);
  const auto xw = FeatureLayout(TargetKind::power, true).encode(f);
  const auto xn = FeatureLayout(TargetKind::power, false).encode(f);
  const auto iw = a.power.weather.at(Method::cqr).predict_interval(xw, 0.2);
  const auto in = a.power.no_weather.at(Method::cqr).predict_interval(xn, 0.2);
  auto req = golden_request(10.0);
  req.method = Method::cqr;
  req.alpha = 0.2;
  const auto r = s->forecast(req);
  EXPECT_EQ(r.weather_weight, 0.5);
  EXPECT_TRUE(r.blended);
  ASSERT_TRUE(r.power_interval);
  EXPECT_NEAR(r.power_interval->lower(), std::max(0.0, 0.5 * iw.lower() + 0.5 * in.lower()), 1e-9);
  EXPECT_NEAR(r.power_interval->upper(), 0.5 * iw.upper() + 0.5 * in.upper(), 1e-9);
  EXPECT_NEAR(*r.power_point, 0.5 * a.power.point_weather.predict(xw) + 0.5 * a.power.point_no_weather.predict(xn),
              1e-9);
  EXPECT_EQ(r.method, Method::cqr);
  EXPECT_EQ(r.alpha, 0.2);
}

TEST(Forecast, EnergyAndRaceTime) {
  auto s = ready_service(support::fresh_dir("svc_energy"));
  const auto r = s->forecast(golden_request());
  EXPECT_DOUBLE_EQ(r.race_time_bounds.first, 180.0 / r.speed_interval.upper() * 60.0);
  EXPECT_DOUBLE_EQ(r.race_time_bounds.second, 180.0 / r.speed_interval.lower() * 60.0);
  ASSERT_TRUE(r.energy_bounds);
  double lo = 1e300;
  double hi = -1e300;
  for (double p : {r.power_interval->lower(), r.power_interval->upper()})
    for (double v : {r.speed_interval.lower(), r.speed_interval.upper()}) {
      const double e = p * (180.0 / v * 60.0) * 60.0 / 1000.0;
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  EXPECT_NEAR(r.energy_bounds->first, lo, 1e-9 * hi);
  EXPECT_NEAR(r.energy_bounds->second, hi, 1e-9 * hi);
  EXPECT_GE(r.power_interval->lower(), 0.0);
}

TEST(Forecast, SpeedOnlyWithoutRider) {
  auto s = ready_service(support::fresh_dir("svc_speed_only"));
  auto req = golden_request();
  req.stage.rider_name.reset();
  req.stage.bmi.reset();
  req.stage.rider_role.reset();
  const auto r = s->forecast(req);
  EXPECT_FALSE(r.power_interval);
  EXPECT_FALSE(r.energy_bounds);
  EXPECT_FALSE(r.rider_name);
}

TEST(Forecast, WindSamplesReplaceStageValue) {
  auto s = ready_service(support::fresh_dir("svc_wind"));
  auto req = golden_request(0.0);
  req.wind = {{0.0, 0.0, 180.0, 6.0}};
  auto direct = golden_request(0.0);
  direct.stage.neg_wind_effect = 6.0;
  EXPECT_EQ(s->forecast(req).speed_interval, s->forecast(direct).speed_interval);
}

TEST(Forecast, DeterministicIdsAndLog) {
  const auto dir = support::fresh_dir("svc_ids");
  auto s = ready_service(dir);
  const auto a = s->forecast(golden_request());
  const auto b = s->forecast(golden_request());
  EXPECT_EQ(a.forecast_id, b.forecast_id);
  auto other = golden_request();
  other.alpha = 0.05;
  EXPECT_NE(s->forecast(other).forecast_id, a.forecast_id);
  // Defaults resolve before hashing.
  auto implicit = golden_request();
  implicit.method.reset();
  implicit.alpha.reset();
  EXPECT_EQ(s->forecast(implicit).forecast_id, a.forecast_id);
  EXPECT_EQ(to_json(*s->find_forecast(a.forecast_id)), to_json(a));

  ForecastService restarted(config_in(dir));
  EXPECT_TRUE(restarted.find_forecast(a.forecast_id));
  EXPECT_FALSE(restarted.ready());
}

TEST(Forecast, Errors) {
  const auto dir = support::fresh_dir("svc_errors");
  ForecastService cold(config_in(dir));
  EXPECT_EQ(status_of([&] { cold.forecast(golden_request()); }), 503);

  auto s = ready_service(dir);
  auto req = golden_request();
  req.model_version = "0000000000000000";
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 409);
  req.model_version = s->model_version();
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 0);

  req = golden_request();
  req.method = Method::jackknife_plus;
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 400);
  req = golden_request();
  req.alpha = 0.7;
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 400);
  req = golden_request(-1.0);
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 400);
  req = golden_request();
  req.stage.humidity = 3.0;
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 400);
  req = golden_request();
  req.stage.bmi.reset();
  EXPECT_EQ(status_of([&] { s->forecast(req); }), 400);
}

TEST(Service, AvailableMethods) {
  auto s = ready_service(support::fresh_dir("svc_methods"));
  EXPECT_EQ(s->available_methods(), (std::vector<Method>{Method::cv_plus, Method::cqr, Method::icp}));
  ForecastService cold(config_in(support::fresh_dir("svc_methods_cold")));
  EXPECT_TRUE(cold.available_methods().empty());
}

TEST(Adjustments, FlagsRecordsAndReplays) {
  const auto dir = support::fresh_dir("svc_adjust");
  auto s = ready_service(dir);
  const auto f = s->forecast(golden_request(0.0));
  const double inside_speed = 0.5 * (f.speed_interval.lower() + f.speed_interval.upper());
  const double inside_power = 0.5 * (f.power_interval->lower() + f.power_interval->upper());

  AdjustmentRequest req{"adj-1", f.forecast_id, inside_speed, inside_power, "coach", "2024-07-01T08:00:00Z"};
  const auto [rec, created] = s->record_adjustment(req);
  EXPECT_TRUE(created);
  EXPECT_FALSE(rec.out_of_interval());
  EXPECT_DOUBLE_EQ(rec.race_time_min, 180.0 / inside_speed * 60.0);
  EXPECT_DOUBLE_EQ(rec.energy_kcal, inside_power * rec.race_time_min * 60.0 / 1000.0);
  EXPECT_EQ(rec.race_name, "Tour de Test - Stage 4");

  const auto [again, created_again] = s->record_adjustment(req);
  EXPECT_FALSE(created_again);
  EXPECT_EQ(again, rec);

  auto conflicting = req;
  conflicting.chosen_power += 1.0;
  EXPECT_EQ(status_of([&] { s->record_adjustment(conflicting); }), 409);

  AdjustmentRequest high{"adj-2", f.forecast_id, inside_speed, f.power_interval->upper() + 15.0, "coach",
                         "2024-07-01T09:00:00Z"};
  const auto flagged = s->record_adjustment(high).first;
  EXPECT_TRUE(flagged.power_out_of_interval);
  EXPECT_FALSE(flagged.speed_out_of_interval);
  EXPECT_TRUE(flagged.out_of_interval());

  AdjustmentRequest fast{std::nullopt, f.forecast_id, f.speed_interval.upper() + 1.0, inside_power, "coach",
                         "2024-07-01T10:00:00Z"};
  const auto derived = s->record_adjustment(fast).first;
  EXPECT_TRUE(derived.speed_out_of_interval);
  EXPECT_EQ(derived.adjustment_id.size(), 16u);
  EXPECT_EQ(s->record_adjustment(fast).first.adjustment_id, derived.adjustment_id);

  EXPECT_EQ(s->adjustments(std::nullopt).size(), 3u);
  EXPECT_EQ(s->adjustments("Tour de Test - Stage 4").size(), 3u);
  EXPECT_TRUE(s->adjustments("Other").empty());

  ForecastService restarted(config_in(dir));
  EXPECT_EQ(restarted.adjustments(std::nullopt), s->adjustments(std::nullopt));
  EXPECT_FALSE(restarted.record_adjustment(req).second);
}

TEST(Adjustments, Validation) {
  auto s = ready_service(support::fresh_dir("svc_adjust_bad"));
  const auto f = s->forecast(golden_request());
  EXPECT_EQ(status_of([&] { s->record_adjustment({std::nullopt, "ffffffffffffffff", 40.0, 250.0, "c", {}}); }), 404);
  EXPECT_EQ(status_of([&] { s->record_adjustment({std::nullopt, f.forecast_id, 0.0, 250.0, "c", {}}); }), 400);
  EXPECT_EQ(status_of([&] { s->record_adjustment({std::nullopt, f.forecast_id, 40.0, -1.0, "c", {}}); }), 400);
  EXPECT_EQ(status_of([&] { s->record_adjustment({std::nullopt, f.forecast_id, 40.0, 250.0, "", {}}); }), 400);
  const auto rec = s->record_adjustment({std::nullopt, f.forecast_id, 40.0, 250.0, "c", {}}).first;
  EXPECT_EQ(rec.timestamp.size(), 20u);
  EXPECT_EQ(rec.timestamp.back(), 'Z');
}

TEST(Staleness, RefusesArtifactsForOtherData) {
  const auto dir = support::fresh_dir("svc_stale");
  const auto& a = support::small_artifacts();
  save_artifact(a.speed, dir / "artifacts");
  save_artifact(a.power, dir / "artifacts");

  auto cfg = config_in(dir);
  write_dataset(dir / "speed.csv", generate_synthetic(240, TargetKind::speed, 3));
  cfg.speed_data = dir / "speed.csv";
  ForecastService fresh(cfg);
  fresh.load_artifacts();
  EXPECT_TRUE(fresh.ready());

  write_dataset(dir / "speed.csv", generate_synthetic(241, TargetKind::speed, 3));
  ForecastService stale(cfg);
  EXPECT_THROW(stale.load_artifacts(), ModelError);
  EXPECT_FALSE(stale.ready());

  ForecastService swapped(cfg);
  EXPECT_THROW(swapped.set_artifacts(a.power, a.speed), ModelError);
}

TEST(Config, JsonAndEnvironment) {
  const auto c = ServiceConfig::from_json(
      R"({"artifact_dir": "a", "default_method": "cqr", "default_alpha": 0.05, "port": 9000, "speed_data": null})");
  EXPECT_EQ(c.artifact_dir, "a");
  EXPECT_EQ(c.default_method, Method::cqr);
  EXPECT_EQ(c.default_alpha, 0.05);
  EXPECT_EQ(c.port, 9000);
  EXPECT_FALSE(c.speed_data);
  EXPECT_THROW(ServiceConfig::from_json(R"({"colour": 1})"), ConfigError);
  EXPECT_THROW(ServiceConfig::from_json(R"({"port": "x"})"), ConfigError);
  EXPECT_THROW(ServiceConfig::from_json(R"({"default_alpha": 0.6})"), ConfigError);
  EXPECT_THROW(ServiceConfig::from_json("[1]"), ConfigError);

  ServiceConfig e;
  const std::map<std::string, std::string> env{{"PELOTON_PORT", "8181"}, {"PELOTON_DEFAULT_METHOD", "cv_plus"}};
  e.apply_environment([&](const std::string& k) -> std::optional<std::string> {
    auto it = env.find(k);
    return it == env.end() ? std::nullopt : std::optional(it->second);
  });
  EXPECT_EQ(e.port, 8181);
  EXPECT_EQ(e.default_method, Method::cv_plus);
  EXPECT_THROW(e.apply_environment([](const std::string& k) -> std::optional<std::string> {
    return k == "PELOTON_DEFAULT_ALPHA" ? std::optional<std::string>("abc") : std::nullopt;
  }),
               ConfigError);
}

TEST(Wire, RequestRoundTrip) {
  auto req = golden_request();
  req.wind = {{0.0, 10.0, 200.0, 4.0}};
  const auto back = parse_forecast_request(to_json(req));
  EXPECT_EQ(back.stage.race_name, req.stage.race_name);
  EXPECT_EQ(back.stage.bmi, req.stage.bmi);
  EXPECT_EQ(back.wind, req.wind);
  EXPECT_EQ(back.stage.neg_wind_effect, 4.0);
  EXPECT_EQ(back.method, req.method);
  EXPECT_EQ(back.alpha, req.alpha);

  auto j = nlohmann::json::parse(to_json(golden_request()));
  j["stage"]["surface"] = "cobbles";
  EXPECT_EQ(status_of([&] { parse_forecast_request(j.dump()); }), 400);
  EXPECT_EQ(status_of([&] { parse_forecast_request("{"); }), 400);
  j = nlohmann::json::parse(to_json(golden_request()));
  j["stage"].erase("distance_km");
  EXPECT_EQ(status_of([&] { parse_forecast_request(j.dump()); }), 400);
}
