// peloton: train, predict, benchmark, synth-data, plot and serve.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 model.

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "peloton/benchmark.hpp"
#include "peloton/data.hpp"
#include "peloton/errors.hpp"
#include "peloton/service.hpp"

namespace {

using namespace peloton;

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitModel = 3;

std::vector<Method> parse_methods(const std::string& list) {
  if (list == "all") return all_methods();
  std::vector<Method> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_method(item));
  return out;
}

/// "lo:hi:step" or a comma list.
std::vector<double> parse_alphas(const std::string& spec) {
  if (spec.find(':') != std::string::npos) {
    double lo = 0, hi = 0, step = 0;
    char c1 = 0, c2 = 0;
    std::istringstream in(spec);
    if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':')
      throw InvalidArgument("alphas must look like lo:hi:step, got '" + spec + "'");
    return alpha_grid(lo, hi, step);
  }
  std::vector<double> out;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stod(item));
  return out;
}

TargetKind infer_target(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::missing_file, "cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  if (header.find("power_w") != std::string::npos) return TargetKind::power;
  if (header.find("speed_kmh") != std::string::npos) return TargetKind::speed;
  throw DataError(DataError::Kind::schema_mismatch, path.string() + ": header names neither speed_kmh nor power_w");
}

std::string read_all(const std::string& path) {
  std::ostringstream ss;
  if (path == "-") {
    ss << std::cin.rdbuf();
  } else {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(DataError::Kind::missing_file, "cannot open " + path);
    ss << in.rdbuf();
  }
  return ss.str();
}

struct LearnerFlags {
  int trees = 100;
  int min_leaf = 5;
  int knn_k = 10;
  int folds = 5;
  int bootstrap = 30;
  double cqr_band = 0.10;

  void add(CLI::App* app) {
    app->add_option("--trees", trees, "Trees per forest")->check(CLI::PositiveNumber);
    app->add_option("--min-leaf", min_leaf, "Minimum leaf size")->check(CLI::PositiveNumber);
    app->add_option("--knn-k", knn_k, "Neighbours in the ICP difficulty model")->check(CLI::PositiveNumber);
    app->add_option("--cv-folds", folds, "K for the CV methods")->check(CLI::Range(2, 1000));
    app->add_option("--bootstraps", bootstrap, "B for the after-bootstrap methods")->check(CLI::Range(2, 100000));
    app->add_option("--cqr-band", cqr_band, "Tail mass of the CQR quantile band")->check(CLI::Range(0.001, 0.999));
  }

  MethodConfig method_config() const {
    MethodConfig c;
    c.base_spec.tree_count = trees;
    c.base_spec.min_leaf_size = min_leaf;
    c.difficulty_spec.k = knn_k;
    c.folds = folds;
    c.bootstrap_count = bootstrap;
    c.cqr_band = cqr_band;
    return c;
  }
};

volatile std::sig_atomic_t g_stop = 0;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conformal race-energy forecasting"};
  app.require_subcommand(1);

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset CSV");
  std::size_t synth_n = 436;
  std::string synth_target = "speed";
  std::uint64_t synth_seed = 7;
  bool synth_hetero = false;
  std::string synth_out;
  synth->add_option("--n", synth_n, "Rows")->check(CLI::PositiveNumber);
  synth->add_option("--target", synth_target, "speed or power")->check(CLI::IsMember({"speed", "power"}));
  synth->add_option("--seed", synth_seed, "Seed");
  synth->add_flag("--heteroscedastic", synth_hetero, "Noise grows with ascent");
  synth->add_option("--out", synth_out, "Output CSV")->required();

  // train
  auto* train = app.add_subcommand("train", "Fit and persist artifacts for one target");
  std::string train_data, train_out = "artifacts", train_methods = "icp,cqr", target_flag;
  std::uint64_t train_seed = 0;
  LearnerFlags train_learner;
  train->add_option("--data", train_data, "Dataset CSV")->required();
  train->add_option("--target", target_flag, "speed or power (default: from the header)")
      ->check(CLI::IsMember({"speed", "power"}));
  train->add_option("--out", train_out, "Artifact directory");
  train->add_option("--methods", train_methods, "Comma list of method ids, or all");
  train->add_option("--seed", train_seed, "Seed");
  train_learner.add(train);

  // predict
  auto* predict = app.add_subcommand("predict", "Print a forecast for one request as JSON");
  std::string predict_request, predict_artifacts = "artifacts", predict_method;
  std::optional<double> predict_days, predict_alpha;
  predict->add_option("--request", predict_request, "Request JSON file, - for stdin")->required();
  predict->add_option("--artifacts", predict_artifacts, "Artifact directory");
  predict->add_option("--days-ahead", predict_days, "Override days_ahead");
  predict->add_option("--alpha", predict_alpha, "Override alpha");
  predict->add_option("--method", predict_method, "Override method");

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Repeated K-fold alpha sweep; writes curves and a manifest");
  std::vector<std::string> bench_data;
  std::string bench_out = "benchmark", bench_methods = "all", bench_alphas = "0.01:0.20:0.01";
  int bench_repeats = 5, bench_folds = 5;
  std::uint64_t bench_seed = 0;
  bool bench_timing = false, bench_no_weather = false;
  std::optional<int> bench_jackknife_trees;
  LearnerFlags bench_learner;
  bench->add_option("--data", bench_data, "Dataset CSV (repeat for speed and power)")->required();
  bench->add_option("--out", bench_out, "Output directory");
  bench->add_option("--methods", bench_methods, "Comma list of method ids, or all");
  bench->add_option("--alphas", bench_alphas, "lo:hi:step or a comma list");
  bench->add_option("--repeats", bench_repeats, "Repeats")->check(CLI::PositiveNumber);
  bench->add_option("--folds", bench_folds, "Folds")->check(CLI::Range(2, 1000));
  bench->add_option("--seed", bench_seed, "Seed");
  bench->add_flag("--timing", bench_timing, "Record calibration wall time (exports then vary run to run)");
  bench->add_flag("--no-weather", bench_no_weather, "Drop the weather features");
  bench->add_option("--jackknife-trees", bench_jackknife_trees, "Trees per leave-one-out forest (default: --trees)")
      ->check(CLI::PositiveNumber);
  bench_learner.add(bench);

  // plot
  auto* plot = app.add_subcommand("plot", "Render an exported curve CSV as SVG");
  std::string plot_in, plot_out, plot_title;
  plot->add_option("--curves", plot_in, "curves_<target>.csv")->required();
  plot->add_option("--out", plot_out, "SVG path")->required();
  plot->add_option("--title", plot_title, "Title");

  // serve
  auto* serve = app.add_subcommand("serve", "Start the HTTP API");
  std::string serve_config;
  std::optional<std::string> serve_host, serve_artifacts;
  std::optional<int> serve_port;
  serve->add_option("--config", serve_config, "JSON config file");
  serve->add_option("--host", serve_host, "Bind address");
  serve->add_option("--port", serve_port, "Port");
  serve->add_option("--artifacts", serve_artifacts, "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitUsage;
  }

  try {
    if (*synth) {
      const auto d = generate_synthetic(synth_n, parse_target_kind(synth_target), synth_seed, synth_hetero);
      std::ofstream out(synth_out, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError(DataError::Kind::missing_file, "cannot write " + synth_out);
      write_dataset(out, d);
      return 0;
    }

    if (*train) {
      const TargetKind kind = target_flag.empty() ? infer_target(train_data) : parse_target_kind(target_flag);
      const auto data = load_dataset(train_data, kind);
      TrainOptions opts;
      opts.methods = parse_methods(train_methods);
      opts.method_defaults = train_learner.method_config();
      opts.point_spec.tree_count = train_learner.trees;
      opts.point_spec.min_leaf_size = train_learner.min_leaf;
      opts.seed = train_seed;
      const auto artifact = peloton::train_target(data, opts);
      save_artifact(artifact, train_out);
      std::cout << to_string(kind) << " artifact " << artifact.model_version << " written to " << train_out << "\n";
      return 0;
    }

    if (*predict) {
      ServiceConfig cfg;
      cfg.artifact_dir = predict_artifacts;
      cfg.forecast_log.clear();
      cfg.adjustments_log.clear();
      ForecastService service(cfg);
      service.load_artifacts();
      auto request = parse_forecast_request(read_all(predict_request));
      if (predict_days) request.days_ahead = *predict_days;
      if (predict_alpha) request.alpha = *predict_alpha;
      if (!predict_method.empty()) request.method = parse_method(predict_method);
      std::cout << to_json(service.forecast(request)) << "\n";
      return 0;
    }

    if (*bench) {
      SweepConfig cfg;
      cfg.alphas = parse_alphas(bench_alphas);
      cfg.methods = parse_methods(bench_methods);
      cfg.repeats = bench_repeats;
      cfg.folds = bench_folds;
      cfg.seed = bench_seed;
      cfg.include_weather = !bench_no_weather;
      cfg.method_defaults = bench_learner.method_config();
      if (bench_jackknife_trees) {
        RegressorSpec loo = cfg.method_defaults.base_spec;
        loo.tree_count = *bench_jackknife_trees;
        cfg.family_base_specs[MethodFamily::jackknife] = loo;
      }
      std::vector<SweepResult> results;
      for (const auto& path : bench_data) {
        const auto data = load_dataset(path, infer_target(path));
        results.push_back(run_sweep(cfg, data));
        for (const auto& [m, why] : results.back().failures)
          std::cerr << "warning: " << to_string(m) << " skipped on " << path << ": " << why << "\n";
      }
      for (const auto& p : export_curves(results, bench_out, {bench_timing})) std::cout << p.string() << "\n";
      return 0;
    }

    if (*plot) {
      const auto curves = import_curves(plot_in);
      std::ofstream out(plot_out, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError(DataError::Kind::missing_file, "cannot write " + plot_out);
      out << render_svg(curves, plot_title.empty() ? std::filesystem::path(plot_in).stem().string() : plot_title);
      return 0;
    }

    if (*serve) {
      ServiceConfig cfg = serve_config.empty() ? ServiceConfig{} : ServiceConfig::load(serve_config);
      cfg.apply_environment();
      if (serve_host) cfg.host = *serve_host;
      if (serve_port) cfg.port = *serve_port;
      if (serve_artifacts) cfg.artifact_dir = *serve_artifacts;
      cfg.validate();
      ForecastService service(cfg);
      service.load_artifacts();
      HttpServer server(service);
      std::signal(SIGINT, [](int) { g_stop = 1; });
      std::signal(SIGTERM, [](int) { g_stop = 1; });
      const int port = server.start(cfg.host, cfg.port);
      std::cout << "serving " << service.model_version() << " on " << cfg.host << ":" << port << std::endl;
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      return 0;
    }
  } catch (const ServiceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.status() == 400 ? kExitData : kExitModel;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const InsufficientData& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ModelError& e) {
    std::cerr << "model error: " << e.what() << "\n";
    return kExitModel;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitModel;
  }
  return kExitUsage;
}
