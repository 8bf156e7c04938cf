#pragma once

// The eight conformal regression procedures behind one calibrate / predict-interval contract.
//
// Resampling families (jackknife, CV, after-bootstrap) keep a list of models plus, for every
// training point i, the models whose training sample excluded i. The aggregate of those models
// is the "leave-i-out" prediction; R_i is its absolute error at x_i. The + variants take rank
// quantiles of {pred_i(x) -/+ R_i}, the minmax variants widen [min_i pred_i(x), max_i pred_i(x)]
// by the rank quantile of R.
//
// ICP and CQR split off a calibration set. ICP normalises residuals by a kNN difficulty
// estimate; CQR conformalises a quantile band of fixed level, so its calibration, like every
// other method's, is shared by all alphas and intervals are nested in alpha.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "peloton/domain.hpp"
#include "peloton/matrix.hpp"
#include "peloton/regressors.hpp"

namespace peloton {

enum class MethodFamily { jackknife, cross_validation, after_bootstrap, icp, cqr };

std::string_view to_string(MethodFamily f);
MethodFamily family_of(Method m);
bool is_minmax(Method m);
/// Methods sharing one calibration state; the + and minmax variants pair up.
std::vector<Method> methods_of(MethodFamily f);

struct MethodDescriptor {
  Method method;
  std::string_view id;
  std::string_view display_name;
  MethodFamily family;
  bool adaptive_width;
  std::string_view training_cost;  // number of base-model fits
};

std::vector<MethodDescriptor> method_catalog();

/// The ceil((1 - alpha)(n + 1))-th smallest value; the maximum when that rank exceeds n.
double quantile_hi(std::span<const double> values, double alpha);
/// -quantile_hi(-values, alpha): the floor(alpha (n + 1))-th smallest, the minimum below rank 1.
double quantile_lo(std::span<const double> values, double alpha);
/// 1-based rank used by quantile_hi, clamped to [1, n].
std::size_t upper_rank(std::size_t n, double alpha);
std::size_t lower_rank(std::size_t n, double alpha);

struct MethodConfig {
  Method method = Method::icp;
  int folds = 5;                        // CV variants
  int bootstrap_count = 30;             // after-bootstrap variants
  double calibration_fraction = 0.25;   // ICP, CQR
  double cqr_band = 0.10;               // CQR quantile levels cqr_band / 2 and 1 - cqr_band / 2
  std::optional<double> beta;           // ICP; 0.01 x sd of calibration |residuals| when empty
  RegressorSpec base_spec = RegressorSpec::random_forest();
  RegressorSpec difficulty_spec = RegressorSpec::knn(10);
  std::uint64_t seed = 0;

  /// Throws ConfigError / InsufficientData when the method cannot run on n points.
  void validate(std::size_t n) const;
};

/// Rows of the calibration split: `calibration` has round(fraction * n) rows; both lists sorted.
struct CalibrationSplit {
  std::vector<std::size_t> training;
  std::vector<std::size_t> calibration;
};
CalibrationSplit calibration_split(std::size_t n, double fraction, std::uint64_t seed);

/// Contiguous folds of a seeded permutation; fold sizes differ by at most one.
std::vector<std::uint32_t> fold_assignment(std::size_t n, int folds, std::uint64_t seed);

struct ResamplingState {
  std::vector<Regressor> models;
  /// held_out_by[i]: models whose training sample excludes training point i (never empty).
  std::vector<std::vector<std::uint32_t>> held_out_by;
  std::vector<double> residuals;  // R_i
  std::vector<std::uint32_t> fold_of;                            // CV only
  std::vector<std::vector<std::uint32_t>> bootstrap_samples;     // after-bootstrap only
};

struct IcpState {
  Regressor base;
  Regressor difficulty;
  std::vector<std::size_t> calibration_rows;
  std::vector<double> scores;  // |y - yhat| / (sigma + beta) on the calibration rows
  double beta = 0.0;
};

struct CqrState {
  Regressor quantile_model;
  std::vector<std::size_t> calibration_rows;
  std::vector<double> scores;  // E_i = max(lo(x_i) - y_i, y_i - hi(x_i)) on the calibration rows
};

class ConformalModel {
 public:
  using State = std::variant<ResamplingState, IcpState, CqrState>;

  ConformalModel(MethodConfig config, std::string fingerprint, std::size_t n_features, State state);

  static ConformalModel calibrate(const MethodConfig& config, const FeatureMatrix& x, std::span<const double> y);

  PredictionInterval predict_interval(std::span<const double> x, double alpha) const;
  /// One interval per alpha; the per-point work is shared across alphas.
  std::vector<PredictionInterval> predict_intervals(std::span<const double> x, std::span<const double> alphas) const;

  /// The same calibration state read through another method of the same family.
  ConformalModel as_method(Method m) const;

  /// Lower and upper quantile predictions at x, CQR only.
  std::pair<double, double> cqr_band(std::span<const double> x) const;

  const MethodConfig& config() const noexcept { return config_; }
  Method method() const noexcept { return config_.method; }
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  std::size_t n_features() const noexcept { return n_features_; }
  const State& state() const noexcept { return shared_->state; }

  std::string serialize() const;
  static ConformalModel deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static ConformalModel load(const std::filesystem::path& path);

 private:
  struct Shared {
    explicit Shared(State s);

    State state;
    std::vector<double> sorted_scores;  // ICP / CQR scores or resampling residuals, ascending
  };

  ConformalModel(MethodConfig config, std::string fingerprint, std::size_t n_features,
                 std::shared_ptr<const Shared> shared)
      : config_(std::move(config)), fingerprint_(std::move(fingerprint)), n_features_(n_features),
        shared_(std::move(shared)) {}

  void check_width(std::span<const double> x) const;

  MethodConfig config_;
  std::string fingerprint_;
  std::size_t n_features_ = 0;
  std::shared_ptr<const Shared> shared_;
};

/// Intervals for a batch of test points: result[t][a] is test point t at alphas[a].
using IntervalGrid = std::vector<std::vector<PredictionInterval>>;

struct FamilyEvaluation {
  std::map<Method, IntervalGrid> intervals;
  double calibration_seconds = 0.0;
};

/// Calibrates one family on (x, y) and predicts every method in `methods` (all from `family`)
/// on `x_test`. Resampling families stream their models (fit, predict the test rows, discard),
/// so memory stays flat even for n leave-one-out forests. Results equal calibrate() followed by
/// predict_intervals() exactly.
FamilyEvaluation evaluate_family(const MethodConfig& config, std::span<const Method> methods, const FeatureMatrix& x,
                                 std::span<const double> y, const FeatureMatrix& x_test,
                                 std::span<const double> alphas);

}  // namespace peloton
