#include <gtest/gtest.h>

#include <cstdlib>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "peloton/service.hpp"

using namespace peloton;
using nlohmann::json;

namespace {

const std::filesystem::path kGolden = std::filesystem::path(PELOTON_TEST_DATA_DIR) / "golden";

struct Api {
  std::filesystem::path dir;
  ForecastService service;

  explicit Api(const std::string& name) : dir(support::fresh_dir(name)), service(config(dir)) {
    const auto& a = support::small_artifacts();
    service.set_artifacts(a.speed, a.power);
  }

  static ServiceConfig config(const std::filesystem::path& d) {
    ServiceConfig c;
    c.artifact_dir = d / "artifacts";
    c.adjustments_log = d / "adjustments.ndjson";
    c.forecast_log = d / "forecasts.ndjson";
    return c;
  }

  HttpReply call(std::string_view method, std::string_view path, std::string_view body = {},
                 std::multimap<std::string, std::string> query = {}) {
    return handle_request(service, method, path, query, body);
  }
};

std::string error_code(const HttpReply& r) { return json::parse(r.body).at("error").at("code"); }

}  // namespace

TEST(Routes, Health) {
  ForecastService cold(Api::config(support::fresh_dir("http_cold")));
  const auto down = handle_request(cold, "GET", "/v1/health", {}, "");
  EXPECT_EQ(down.status, 503);
  EXPECT_TRUE(json::parse(down.body).at("model_version").is_null());

  Api api("http_health");
  const auto up = api.call("GET", "/v1/health");
  EXPECT_EQ(up.status, 200);
  EXPECT_EQ(json::parse(up.body).at("status"), "ok");
  EXPECT_EQ(json::parse(up.body).at("model_version"), api.service.model_version());
  EXPECT_EQ(api.call("POST", "/v1/health").status, 405);
}

TEST(Routes, Methods) {
  Api api("http_methods");
  const auto r = api.call("GET", "/v1/methods");
  ASSERT_EQ(r.status, 200);
  const auto j = json::parse(r.body);
  ASSERT_EQ(j.at("methods").size(), 8u);
  int available = 0;
  for (const auto& m : j.at("methods")) available += m.at("available").get<bool>();
  EXPECT_EQ(available, 3);
  EXPECT_EQ(j.at("default_method"), "icp");
  EXPECT_EQ(j.at("default_alpha"), 0.1);
}

TEST(Routes, UnknownAndWrongVerb) {
  Api api("http_unknown");
  const auto r = api.call("GET", "/v1/nothing");
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(error_code(r), "not_found");
  EXPECT_EQ(api.call("GET", "/v1/forecast").status, 405);
  EXPECT_EQ(api.call("DELETE", "/v1/adjustments").status, 405);
}

TEST(Forecast, GoldenResponse) {
  Api api("http_golden");
  const auto request = support::read_file(kGolden / "forecast_request.json");
  const auto r = api.call("POST", "/v1/forecast", request);
  ASSERT_EQ(r.status, 200) << r.body;
  const auto actual = json::parse(r.body);
  if (std::getenv("PELOTON_UPDATE_GOLDEN"))
    support::write_file(kGolden / "forecast_response.json", actual.dump(2) + "\n");
  const auto expected = json::parse(support::read_file(kGolden / "forecast_response.json"));
  const auto diff = support::json_difference(expected, actual);
  EXPECT_FALSE(diff) << *diff;

  const auto& s = actual.at("speed_interval");
  const auto& p = actual.at("power_interval");
  double lo = 1e300;
  double hi = -1e300;
  for (double w : {p.at("lower_w").get<double>(), p.at("upper_w").get<double>()})
    for (double v : {s.at("lower_kmh").get<double>(), s.at("upper_kmh").get<double>()}) {
      const double e = w * (180.0 / v * 60.0) * 60.0 / 1000.0;
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  EXPECT_NEAR(actual.at("energy_bounds").at("lower_kcal").get<double>(), lo, 1e-9 * hi);
  EXPECT_NEAR(actual.at("energy_bounds").at("upper_kcal").get<double>(), hi, 1e-9 * hi);
}

TEST(Forecast, ErrorStatuses) {
  Api api("http_forecast_errors");
  auto req = json::parse(support::read_file(kGolden / "forecast_request.json"));
  EXPECT_EQ(api.call("POST", "/v1/forecast", "{oops").status, 400);
  auto bad = req;
  bad["method"] = "jackknife_plus";
  EXPECT_EQ(api.call("POST", "/v1/forecast", bad.dump()).status, 400);
  bad = req;
  bad["method"] = "magic";
  EXPECT_EQ(api.call("POST", "/v1/forecast", bad.dump()).status, 400);
  bad = req;
  bad["stage"]["distance_km"] = -5;
  const auto r = api.call("POST", "/v1/forecast", bad.dump());
  EXPECT_EQ(r.status, 400);
  EXPECT_NE(r.body.find("distance_km"), std::string::npos);
  bad = req;
  bad["model_version"] = "stale";
  EXPECT_EQ(api.call("POST", "/v1/forecast", bad.dump()).status, 409);

  ForecastService cold(Api::config(support::fresh_dir("http_forecast_cold")));
  EXPECT_EQ(handle_request(cold, "POST", "/v1/forecast", {}, req.dump()).status, 503);
}

TEST(Adjustments, PostReplayAndList) {
  Api api("http_adjust");
  const auto f = json::parse(api.call("POST", "/v1/forecast", support::read_file(kGolden / "forecast_request.json")).body);
  const double speed = 0.5 * (f["speed_interval"]["lower_kmh"].get<double>() + f["speed_interval"]["upper_kmh"].get<double>());
  json adj{{"adjustment_id", "a1"},
           {"forecast_id", f["forecast_id"]},
           {"chosen_speed_kmh", speed},
           {"chosen_power_w", f["power_interval"]["upper_w"].get<double>() + 20.0},
           {"author", "coach"},
           {"timestamp", "2024-07-03T18:00:00Z"}};
  const auto created = api.call("POST", "/v1/adjustments", adj.dump());
  ASSERT_EQ(created.status, 201) << created.body;
  const auto rec = json::parse(created.body);
  EXPECT_EQ(rec.at("adjustment_id"), "a1");
  EXPECT_TRUE(rec.at("power_out_of_interval").get<bool>());
  EXPECT_FALSE(rec.at("speed_out_of_interval").get<bool>());
  EXPECT_NEAR(rec.at("energy_kcal").get<double>(),
              adj["chosen_power_w"].get<double>() * (180.0 / speed * 60.0) * 60.0 / 1000.0, 1e-9);

  const auto replay = api.call("POST", "/v1/adjustments", adj.dump());
  EXPECT_EQ(replay.status, 200);
  EXPECT_EQ(json::parse(replay.body), rec);

  adj["chosen_power_w"] = 100.0;
  EXPECT_EQ(api.call("POST", "/v1/adjustments", adj.dump()).status, 409);
  adj["forecast_id"] = "0123456789abcdef";
  adj["adjustment_id"] = "a2";
  EXPECT_EQ(api.call("POST", "/v1/adjustments", adj.dump()).status, 404);
  EXPECT_EQ(api.call("POST", "/v1/adjustments", "{\"forecast_id\": 3}").status, 400);

  auto list = json::parse(api.call("GET", "/v1/adjustments").body).at("adjustments");
  ASSERT_EQ(list.size(), 1u);
  EXPECT_EQ(list[0], rec);
  list = json::parse(api.call("GET", "/v1/adjustments", {}, {{"race", "Tour de Test - Stage 4"}}).body).at("adjustments");
  EXPECT_EQ(list.size(), 1u);
  list = json::parse(api.call("GET", "/v1/adjustments", {}, {{"race", "Elsewhere"}}).body).at("adjustments");
  EXPECT_TRUE(list.empty());
}

TEST(Server, ServesOverSocket) {
  Api api("http_socket");
  HttpServer server(api.service);
  const int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  httplib::Client client("127.0.0.1", port);
  const auto health = client.Get("/v1/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);

  const auto body = support::read_file(kGolden / "forecast_request.json");
  const auto r = client.Post("/v1/forecast", body, "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, api.call("POST", "/v1/forecast", body).body);
  EXPECT_EQ(r->get_header_value("Content-Type"), "application/json");

  const auto missing = client.Get("/nowhere");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body).at("error").at("code"), "not_found");

  const auto listed = client.Get("/v1/adjustments?race=Tour%20de%20Test%20-%20Stage%204");
  ASSERT_TRUE(listed);
  EXPECT_EQ(listed->status, 200);
  server.stop();
}
