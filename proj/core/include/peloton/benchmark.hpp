#pragma once

// Repeated K-fold evaluation of conformal methods over a grid of significance levels, the
// elbow heuristic for picking alpha, and point-forecast metrics.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peloton/conformal.hpp"
#include "peloton/data.hpp"

namespace peloton {

/// lo, lo + step, ..., hi with every value rounded to 12 decimals so grids compare exactly.
std::vector<double> alpha_grid(double lo, double hi, double step);

struct SweepConfig {
  std::vector<double> alphas = alpha_grid(0.01, 0.20, 0.01);
  int repeats = 5;
  int folds = 5;
  std::vector<Method> methods = all_methods();
  std::uint64_t seed = 0;
  /// Per-method settings (K, B, calibration fraction, learners); method and seed are set per cell.
  MethodConfig method_defaults;
  /// Base learner per family where it should differ from method_defaults.base_spec.
  std::map<MethodFamily, RegressorSpec> family_base_specs;
  bool include_weather = true;

  void validate() const;
};

struct CurvePoint {
  double alpha = 0.0;
  double error_rate = 0.0;
  double mean_width = 0.0;
  double width_stddev = 0.0;
  std::optional<double> wall_time_s;  // calibration only; absent when not recorded

  friend bool operator==(const CurvePoint&, const CurvePoint&) = default;
};

struct BenchmarkCurve {
  Method method = Method::icp;
  std::vector<CurvePoint> points;  // ascending alpha

  const CurvePoint& at(double alpha) const;

  friend bool operator==(const BenchmarkCurve&, const BenchmarkCurve&) = default;
};

struct SweepResult {
  TargetKind target = TargetKind::speed;
  SweepConfig config;
  std::string data_fingerprint;
  std::size_t n = 0;
  std::vector<BenchmarkCurve> curves;             // catalog order
  std::map<Method, std::string> failures;          // methods that could not run on this data

  const BenchmarkCurve& curve(Method m) const;
};

/// Per (repeat, fold) cell: calibrate on the training folds, evaluate every alpha on the held-out
/// fold. Error rates, widths and widths' spread are averaged over cells. Methods of one family
/// share a single calibration per cell. Deterministic given config.seed.
SweepResult run_sweep(const SweepConfig& config, const Dataset& data);
SweepResult run_sweep(const SweepConfig& config, const FeatureMatrix& x, std::span<const double> y,
                      TargetKind target);

/// Alpha at the maximum perpendicular distance of (alpha, mean_width) from the chord between the
/// curve's endpoints; ties go to the smaller alpha. Throws InsufficientData below 4 points.
double recommend_alpha(const BenchmarkCurve& curve);

struct PointMetrics {
  double mae = 0.0;
  double r_squared = 0.0;
  std::size_t n_eval = 0;
};

/// Throws InvalidArgument on a length mismatch or empty input, UndefinedMetric when the actuals
/// have zero variance.
PointMetrics point_metrics(std::span<const double> predictions, std::span<const double> actuals);

double mean_absolute_error(std::span<const double> predictions, std::span<const double> actuals);
double r_squared(std::span<const double> predictions, std::span<const double> actuals);

struct ForecasterComparison {
  PointMetrics model;
  PointMetrics baseline;
  double mae_reduction_pct = 0.0;  // 100 (MAE_base - MAE_model) / MAE_base
};

ForecasterComparison compare_forecasters(std::span<const double> model_predictions,
                                         std::span<const double> baseline_predictions,
                                         std::span<const double> actuals);

struct ExportOptions {
  bool include_timing = false;  // wall times vary run to run; off keeps exports byte-stable
};

/// Writes curves_<target>.csv per result and a manifest.json into `dir`. Returns written paths.
std::vector<std::filesystem::path> export_curves(std::span<const SweepResult> results, const std::filesystem::path& dir,
                                                 const ExportOptions& options = {});
std::vector<BenchmarkCurve> import_curves(const std::filesystem::path& csv_path);

/// Error-rate and width panels, one line per method; adaptive methods are dashed.
std::string render_svg(std::span<const BenchmarkCurve> curves, std::string_view title);

}  // namespace peloton
