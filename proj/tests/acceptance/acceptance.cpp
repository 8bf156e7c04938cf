// Acceptance suite: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>

#include "equivalence.hpp"
#include "fixtures.hpp"
#include "peloton/benchmark.hpp"
#include "peloton/conformal.hpp"
#include "peloton/data.hpp"
#include "peloton/domain.hpp"
#include "peloton/service.hpp"

using namespace peloton;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << o.detail << std::endl;
}

// Benchmark set: homoscedastic synthetic power data.
const Dataset& benchmark_set() {
  static const Dataset d = generate_synthetic(1446, TargetKind::power, 7);
  return d;
}

SweepConfig protocol_config(std::vector<double> alphas, int repeats) {
  SweepConfig c;
  c.alphas = std::move(alphas);
  c.repeats = repeats;
  c.folds = 5;
  c.seed = 1;
  // Leave-one-out forests are the dominant cost; ten trees per forest keep the suite in budget.
  RegressorSpec loo = c.method_defaults.base_spec;
  loo.tree_count = 10;
  c.family_base_specs[MethodFamily::jackknife] = loo;
  return c;
}

struct Protocol {
  SweepResult result;
  double seconds = 0.0;
};

const Protocol& full_protocol() {
  static const Protocol p = [] {
    const auto t0 = Clock::now();
    auto r = run_sweep(protocol_config(alpha_grid(0.01, 0.20, 0.01), 5), benchmark_set());
    return Protocol{std::move(r), seconds_since(t0)};
  }();
  return p;
}

Outcome energy_example() {
  const double e = compute_energy(250.0, 384.0);
  return {e == 5760.0, "compute_energy(250 W, 384 min) = " + fmt(e, 10) + " kcal"};
}

Outcome weather_anchors() {
  const double a = weather_weight(5.0);
  const double b = weather_weight(10.0);
  return {a == 0.9 && b == 0.5, "w(5) = " + fmt(a, 17) + ", w(10) = " + fmt(b, 17)};
}

Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  const auto r = support::check_oracle_equivalence(50, 20240704);
  const double s = seconds_since(t0);
  std::string detail = std::to_string(r.datasets) + " datasets, " + std::to_string(r.comparisons) +
                       " comparisons, " + std::to_string(r.mismatches) + " mismatches, max rel err " +
                       fmt(r.max_relative_error, 3) + ", " + fmt(s, 3) + " s";
  if (!r.first_failure.empty()) detail += "; first: " + r.first_failure;
  return {r.datasets == 50 && r.mismatches == 0 && s < 30.0, detail};
}

Outcome coverage() {
  const auto& p = full_protocol();
  bool ok = p.result.failures.empty() && p.seconds < 600.0;
  std::string detail;
  for (const auto& c : p.result.curves) {
    detail += std::string(to_string(c.method)) + " [";
    for (double a : {0.05, 0.10, 0.20}) {
      const double err = c.at(a).error_rate;
      const bool good = is_minmax(c.method) ? err <= a : std::abs(err - a) <= 0.03;
      ok = ok && good;
      detail += fmt(err, 3) + (good ? "" : "!") + (a < 0.2 ? " " : "");
    }
    detail += "] ";
  }
  return {ok, detail + "in " + fmt(p.seconds, 4) + " s"};
}

Outcome width_monotonicity() {
  const auto train = generate_synthetic(300, TargetKind::power, 31);
  const auto test = generate_synthetic(100, TargetKind::power, 32);
  const FeatureLayout layout(TargetKind::power, true);
  const auto x = layout.encode(train);
  const auto xt = layout.encode(test);
  const auto alphas = alpha_grid(0.01, 0.20, 0.01);
  long checks = 0;
  long violations = 0;
  for (auto m : all_methods()) {
    MethodConfig c;
    c.method = m;
    c.seed = 5;
    c.base_spec.tree_count = family_of(m) == MethodFamily::jackknife ? 10 : 50;
    const auto model = ConformalModel::calibrate(c, x, train.targets);
    for (std::size_t t = 0; t < xt.rows(); ++t) {
      const auto iv = model.predict_intervals(xt.row(t), alphas);
      for (std::size_t a = 1; a < iv.size(); ++a) {
        ++checks;
        violations += iv[a].width() > iv[a - 1].width();
      }
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in " + std::to_string(checks) + " steps"};
}

Outcome adaptivity() {
  const auto data = generate_synthetic(1446, TargetKind::power, 7, true);
  auto cfg = protocol_config({0.10}, 1);
  cfg.methods = {Method::jackknife_plus, Method::cqr, Method::icp};
  const auto r = run_sweep(cfg, data);
  const double jk = r.curve(Method::jackknife_plus).at(0.10).width_stddev;
  const double icp = r.curve(Method::icp).at(0.10).width_stddev;
  const double cqr = r.curve(Method::cqr).at(0.10).width_stddev;
  return {icp >= 5.0 * jk && cqr >= 5.0 * jk,
          "width sd: jackknife+ " + fmt(jk) + ", icp " + fmt(icp) + " (" + fmt(icp / jk, 3) + "x), cqr " + fmt(cqr) +
              " (" + fmt(cqr / jk, 3) + "x)"};
}

Outcome adaptive_widths() {
  const auto& r = full_protocol().result;
  const double jk = r.curve(Method::jackknife_plus).at(0.05).mean_width;
  const double cqr = r.curve(Method::cqr).at(0.05).mean_width;
  const double icp = r.curve(Method::icp).at(0.05).mean_width;
  return {cqr >= jk && icp >= jk,
          "mean width at 0.05: jackknife+ " + fmt(jk) + ", cqr " + fmt(cqr) + ", icp " + fmt(icp)};
}

Outcome elbow() {
  const double a = recommend_alpha(full_protocol().result.curve(Method::icp));
  const bool ok = std::abs(a - 0.04) < 1e-9 || std::abs(a - 0.05) < 1e-9 || std::abs(a - 0.06) < 1e-9;
  return {ok, "icp elbow at alpha = " + fmt(a, 3)};
}

Outcome benchmark_determinism(const std::filesystem::path& peloton, const std::filesystem::path& work) {
  std::filesystem::create_directories(work);
  const auto data = work / "bench_power.csv";
  write_dataset(data, generate_synthetic(200, TargetKind::power, 9));
  std::string outputs[2];
  for (int run = 0; run < 2; ++run) {
    const auto out = work / ("bench_run" + std::to_string(run));
    std::filesystem::remove_all(out);
    const std::string cmd = "\"" + peloton.string() + "\" benchmark --data \"" + data.string() + "\" --out \"" +
                            out.string() + "\" --repeats 2 --folds 3 --trees 10 --jackknife-trees 5 --seed 42 > \"" +
                            (work / "bench.log").string() + "\" 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "benchmark command failed: " + cmd};
    outputs[run] = support::read_file(out / "curves_power.csv");
  }
  const bool same = !outputs[0].empty() && outputs[0] == outputs[1];
  return {same, std::to_string(outputs[0].size()) + " bytes, " + (same ? "identical" : "different")};
}

Outcome service_contract(const std::filesystem::path& golden, const std::filesystem::path& work) {
  const auto dir = work / "service";
  std::filesystem::remove_all(dir);
  ServiceConfig cfg;
  cfg.artifact_dir = dir / "artifacts";
  cfg.adjustments_log = dir / "adjustments.ndjson";
  cfg.forecast_log = dir / "forecasts.ndjson";
  std::filesystem::create_directories(dir);
  ForecastService service(cfg);
  const auto& a = support::small_artifacts();
  service.set_artifacts(a.speed, a.power);

  const auto reply =
      handle_request(service, "POST", "/v1/forecast", {}, support::read_file(golden / "forecast_request.json"));
  if (reply.status != 200) return {false, "status " + std::to_string(reply.status) + ": " + reply.body};
  const auto actual = nlohmann::json::parse(reply.body);
  const auto expected = nlohmann::json::parse(support::read_file(golden / "forecast_response.json"));
  if (auto diff = support::json_difference(expected, actual)) return {false, "response differs at " + *diff};

  const PredictionInterval speed(actual["speed_interval"]["lower_kmh"], actual["speed_interval"]["upper_kmh"], 0.1,
                                 Method::icp);
  const PredictionInterval power(actual["power_interval"]["lower_w"], actual["power_interval"]["upper_w"], 0.1,
                                 Method::icp);
  double lo = 1e300;
  double hi = -1e300;
  for (double w : {power.lower(), power.upper()})
    for (double v : {speed.lower(), speed.upper()}) {
      const double e = compute_energy(w, race_time_from_speed(180.0, v));
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  const double got_lo = actual["energy_bounds"]["lower_kcal"];
  const double got_hi = actual["energy_bounds"]["upper_kcal"];
  const bool ok = std::abs(got_lo - lo) <= 1e-9 * hi && std::abs(got_hi - hi) <= 1e-9 * hi;
  return {ok, "golden response matched; energy [" + fmt(got_lo, 8) + ", " + fmt(got_hi, 8) + "] kcal vs corners [" +
                  fmt(lo, 8) + ", " + fmt(hi, 8) + "]"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::string work = "acceptance_work";
  std::string peloton;
  std::string data_dir = PELOTON_TEST_DATA_DIR;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--peloton", peloton, "CLI binary")->required();
  app.add_option("--data-dir", data_dir, "Directory holding golden/");
  CLI11_PARSE(app, argc, argv);

  const std::filesystem::path golden = std::filesystem::path(data_dir) / "golden";
  report(1, "energy worked example", energy_example);
  report(2, "weather weight anchors", weather_anchors);
  report(3, "oracle equivalence, 50 datasets", oracle_equivalence);
  report(4, "coverage on the benchmark set", coverage);
  report(5, "width monotone in alpha", width_monotonicity);
  report(6, "adaptive width spread on heteroscedastic data", adaptivity);
  report(7, "adaptive methods wider at alpha 0.05", adaptive_widths);
  report(8, "icp elbow", elbow);
  report(9, "benchmark byte-identical across runs", [&] { return benchmark_determinism(peloton, work); });
  report(10, "forecast service contract", [&] { return service_contract(golden, work); });

  std::cout << (10 - failures) << "/10 criteria met" << std::endl;
  return failures == 0 ? 0 : 1;
}
