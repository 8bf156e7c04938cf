#include "peloton/conformal.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "parallel.hpp"
#include "peloton/errors.hpp"
#include "peloton/random.hpp"

namespace peloton {

namespace {

// Seed-derivation tags.
constexpr std::uint64_t kTagFolds = 102;
constexpr std::uint64_t kTagBootstrap = 104;
constexpr std::uint64_t kTagSplit = 106;
constexpr std::uint64_t kTagBase = 107;

constexpr int kBootstrapAttempts = 10;
constexpr double kRankSlack = 1e-9;    // absorbs binary representation error of alpha
constexpr double kMinNormaliser = 1e-12;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
}

/// Interval with the guarantee lower <= upper; a crossed pair collapses to its midpoint.
PredictionInterval ordered_interval(double lower, double upper, double alpha, Method m) {
  if (upper < lower) {
    const double mid = lower + (upper - lower) / 2.0;
    return {mid, mid, alpha, m};
  }
  return {lower, upper, alpha, m};
}

double pop_stddev(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// ---------------------------------------------------------------------------------------------
// Resampling plans

struct ResamplingPlan {
  std::vector<std::vector<std::size_t>> training_rows;      // per model, ascending
  std::vector<std::vector<std::uint32_t>> held_out_by;      // per training point
  std::vector<std::vector<std::uint32_t>> held_out_rows;    // per model: points it predicts
  std::vector<std::uint32_t> fold_of;
  std::vector<std::vector<std::uint32_t>> bootstrap_samples;
};

void index_held_out(ResamplingPlan& plan) {
  plan.held_out_rows.assign(plan.training_rows.size(), {});
  for (std::size_t i = 0; i < plan.held_out_by.size(); ++i)
    for (auto j : plan.held_out_by[i]) plan.held_out_rows[j].push_back(static_cast<std::uint32_t>(i));
}

ResamplingPlan make_plan(const MethodConfig& config, std::size_t n) {
  ResamplingPlan plan;
  switch (family_of(config.method)) {
    case MethodFamily::jackknife: {
      plan.training_rows.resize(n);
      plan.held_out_by.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto& rows = plan.training_rows[i];
        rows.reserve(n - 1);
        for (std::size_t r = 0; r < n; ++r)
          if (r != i) rows.push_back(r);
        plan.held_out_by[i] = {static_cast<std::uint32_t>(i)};
      }
      break;
    }
    case MethodFamily::cross_validation: {
      plan.fold_of = fold_assignment(n, config.folds, derive_seed(config.seed, kTagFolds));
      const auto k = static_cast<std::size_t>(config.folds);
      plan.training_rows.resize(k);
      plan.held_out_by.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t f = 0; f < k; ++f)
          if (plan.fold_of[i] != f) plan.training_rows[f].push_back(i);
        plan.held_out_by[i] = {plan.fold_of[i]};
      }
      break;
    }
    case MethodFamily::after_bootstrap: {
      const auto b = static_cast<std::size_t>(config.bootstrap_count);
      for (int attempt = 0; attempt < kBootstrapAttempts; ++attempt) {
        Rng rng(derive_seed(config.seed, kTagBootstrap, static_cast<std::uint64_t>(attempt)));
        plan.bootstrap_samples.assign(b, {});
        plan.held_out_by.assign(n, {});
        std::vector<char> in_bag(n);
        for (std::size_t m = 0; m < b; ++m) {
          auto& sample = plan.bootstrap_samples[m];
          sample.resize(n);
          for (auto& s : sample) s = static_cast<std::uint32_t>(rng.below(n));
          std::sort(sample.begin(), sample.end());
          std::fill(in_bag.begin(), in_bag.end(), 0);
          for (auto s : sample) in_bag[s] = 1;
          for (std::size_t i = 0; i < n; ++i)
            if (!in_bag[i]) plan.held_out_by[i].push_back(static_cast<std::uint32_t>(m));
        }
        const bool covered = std::all_of(plan.held_out_by.begin(), plan.held_out_by.end(),
                                         [](const auto& h) { return !h.empty(); });
        if (covered) {
          plan.training_rows.resize(b);
          for (std::size_t m = 0; m < b; ++m)
            plan.training_rows[m].assign(plan.bootstrap_samples[m].begin(), plan.bootstrap_samples[m].end());
          index_held_out(plan);
          return plan;
        }
      }
      throw InsufficientData("some training point stayed in-bag for every bootstrap sample after " +
                             std::to_string(kBootstrapAttempts) + " attempts; increase bootstrap_count");
    }
    default:
      throw ConfigError("not a resampling method");
  }
  index_held_out(plan);
  return plan;
}

/// Every resampled model runs the same seeded learner, so leave-out predictions differ only
/// through the data they saw.
RegressorSpec model_spec(const MethodConfig& config) {
  RegressorSpec s = config.base_spec;
  s.seed = derive_seed(config.seed, kTagBase);
  return s;
}

/// Mean of `values` over the models listed in `models`, summed in list order.
template <typename Lookup>
double aggregate(std::span<const std::uint32_t> models, Lookup&& value_of) {
  double s = 0.0;
  for (auto j : models) s += value_of(j);
  return s / static_cast<double>(models.size());
}

/// Intervals of a resampling method from the leave-i-out predictions at x and the residuals.
std::vector<PredictionInterval> resampling_intervals(Method method, std::span<const double> loo_pred,
                                                     std::span<const double> residuals,
                                                     std::span<const double> sorted_residuals,
                                                     std::span<const double> alphas) {
  const std::size_t n = loo_pred.size();
  std::vector<PredictionInterval> out;
  out.reserve(alphas.size());
  if (is_minmax(method)) {
    const auto [lo_it, hi_it] = std::minmax_element(loo_pred.begin(), loo_pred.end());
    for (double a : alphas) {
      check_alpha(a);
      const double q = sorted_residuals[upper_rank(n, a) - 1];
      out.push_back(ordered_interval(*lo_it - q, *hi_it + q, a, method));
    }
    return out;
  }
  std::vector<double> lower(n);
  std::vector<double> upper(n);
  for (std::size_t i = 0; i < n; ++i) {
    lower[i] = loo_pred[i] - residuals[i];
    upper[i] = loo_pred[i] + residuals[i];
  }
  std::sort(lower.begin(), lower.end());
  std::sort(upper.begin(), upper.end());
  for (double a : alphas) {
    check_alpha(a);
    out.push_back(ordered_interval(lower[lower_rank(n, a) - 1], upper[upper_rank(n, a) - 1], a, method));
  }
  return out;
}

// ---------------------------------------------------------------------------------------------
// Split-based helpers

struct SplitData {
  CalibrationSplit split;
  FeatureMatrix x_train;
  std::vector<double> y_train;
  FeatureMatrix x_cal;
  std::vector<double> y_cal;
};

SplitData split_data(const MethodConfig& config, const FeatureMatrix& x, std::span<const double> y) {
  SplitData d;
  d.split = calibration_split(x.rows(), config.calibration_fraction, derive_seed(config.seed, kTagSplit));
  d.x_train = x.select_rows(d.split.training);
  d.y_train = select(y, d.split.training);
  d.x_cal = x.select_rows(d.split.calibration);
  d.y_cal = select(y, d.split.calibration);
  return d;
}

IcpState calibrate_icp(const MethodConfig& config, const FeatureMatrix& x, std::span<const double> y) {
  auto d = split_data(config, x, y);
  RegressorSpec base_spec = config.base_spec;
  base_spec.seed = derive_seed(config.seed, kTagBase);
  Regressor base = Regressor::fit(base_spec, d.x_train, d.y_train);

  const auto honest = base.honest_training_predictions(d.x_train);
  std::vector<double> train_residuals(d.y_train.size());
  for (std::size_t i = 0; i < d.y_train.size(); ++i) train_residuals[i] = std::abs(d.y_train[i] - honest[i]);
  Regressor difficulty = Regressor::fit(config.difficulty_spec, d.x_train, train_residuals);

  const std::size_t m = d.y_cal.size();
  std::vector<double> residuals(m);
  std::vector<double> sigma(m);
  for (std::size_t i = 0; i < m; ++i) {
    residuals[i] = std::abs(d.y_cal[i] - base.predict(d.x_cal.row(i)));
    sigma[i] = difficulty.predict_difficulty(d.x_cal.row(i));
  }
  const double beta = config.beta ? *config.beta : 0.01 * pop_stddev(residuals);
  std::vector<double> scores(m);
  for (std::size_t i = 0; i < m; ++i) scores[i] = residuals[i] / std::max(sigma[i] + beta, kMinNormaliser);
  return IcpState{std::move(base), std::move(difficulty), std::move(d.split.calibration), std::move(scores), beta};
}

/// Ordered (lo, hi) quantile band from a sorted target pool; `band` is the combined tail mass.
std::pair<double, double> quantile_band(std::span<const double> pool, double band) {
  double lo = interpolated_quantile(pool, band / 2.0);
  double hi = interpolated_quantile(pool, 1.0 - band / 2.0);
  if (lo > hi) std::swap(lo, hi);
  return {lo, hi};
}

std::vector<double> pooled(const Regressor& model, std::span<const double> x) {
  return std::visit([&](const auto& m) { return m.pooled_targets(x); }, model.model());
}

CqrState calibrate_cqr(const MethodConfig& config, const FeatureMatrix& x, std::span<const double> y) {
  auto d = split_data(config, x, y);
  RegressorSpec spec = config.base_spec;
  if (spec.kind == RegressorSpec::Kind::random_forest) spec.kind = RegressorSpec::Kind::quantile_forest;
  spec.seed = derive_seed(config.seed, kTagBase);
  Regressor model = Regressor::fit(spec, d.x_train, d.y_train);
  std::vector<double> scores(d.y_cal.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto [lo, hi] = quantile_band(pooled(model, d.x_cal.row(i)), config.cqr_band);
    scores[i] = std::max(lo - d.y_cal[i], d.y_cal[i] - hi);
  }
  return CqrState{std::move(model), std::move(d.split.calibration), std::move(scores)};
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Catalog and rank quantiles

std::string_view to_string(MethodFamily f) {
  switch (f) {
    case MethodFamily::jackknife: return "jackknife";
    case MethodFamily::cross_validation: return "cross_validation";
    case MethodFamily::after_bootstrap: return "after_bootstrap";
    case MethodFamily::icp: return "icp";
    case MethodFamily::cqr: return "cqr";
  }
  return "unknown";
}

MethodFamily family_of(Method m) {
  switch (m) {
    case Method::jackknife_plus:
    case Method::jackknife_minmax: return MethodFamily::jackknife;
    case Method::jackknife_plus_after_bootstrap:
    case Method::jackknife_minmax_after_bootstrap: return MethodFamily::after_bootstrap;
    case Method::cv_plus:
    case Method::cv_minmax: return MethodFamily::cross_validation;
    case Method::cqr: return MethodFamily::cqr;
    case Method::icp: return MethodFamily::icp;
  }
  return MethodFamily::icp;
}

bool is_minmax(Method m) {
  return m == Method::jackknife_minmax || m == Method::jackknife_minmax_after_bootstrap || m == Method::cv_minmax;
}

std::vector<Method> methods_of(MethodFamily f) {
  switch (f) {
    case MethodFamily::jackknife: return {Method::jackknife_plus, Method::jackknife_minmax};
    case MethodFamily::after_bootstrap:
      return {Method::jackknife_plus_after_bootstrap, Method::jackknife_minmax_after_bootstrap};
    case MethodFamily::cross_validation: return {Method::cv_plus, Method::cv_minmax};
    case MethodFamily::cqr: return {Method::cqr};
    case MethodFamily::icp: return {Method::icp};
  }
  return {};
}

std::vector<MethodDescriptor> method_catalog() {
  return {
      {Method::jackknife_plus, "jackknife_plus", "jackknife+", MethodFamily::jackknife, false, "n"},
      {Method::jackknife_minmax, "jackknife_minmax", "jackknife-minmax", MethodFamily::jackknife, false, "n"},
      {Method::jackknife_plus_after_bootstrap, "jackknife_plus_after_bootstrap", "jackknife+-after-bootstrap",
       MethodFamily::after_bootstrap, false, "B"},
      {Method::jackknife_minmax_after_bootstrap, "jackknife_minmax_after_bootstrap",
       "jackknife-minmax-after-bootstrap", MethodFamily::after_bootstrap, false, "B"},
      {Method::cv_plus, "cv_plus", "CV+", MethodFamily::cross_validation, false, "K"},
      {Method::cv_minmax, "cv_minmax", "CV-minmax", MethodFamily::cross_validation, false, "K"},
      {Method::cqr, "cqr", "CQR", MethodFamily::cqr, true, "1"},
      {Method::icp, "icp", "ICP", MethodFamily::icp, true, "1"},
  };
}

std::size_t upper_rank(std::size_t n, double alpha) {
  if (n == 0) throw InvalidArgument("rank of an empty sample");
  const double r = std::ceil((1.0 - alpha) * static_cast<double>(n + 1) - kRankSlack);
  if (r < 1.0) return 1;
  if (r > static_cast<double>(n)) return n;
  return static_cast<std::size_t>(r);
}

std::size_t lower_rank(std::size_t n, double alpha) {
  if (n == 0) throw InvalidArgument("rank of an empty sample");
  // quantile_lo(v) = -quantile_hi(-v): the k-th largest is the (n + 1 - k)-th smallest.
  return n + 1 - upper_rank(n, alpha);
}

double quantile_hi(std::span<const double> values, double alpha) {
  if (values.empty()) throw InvalidArgument("quantile of an empty list");
  check_alpha(alpha);
  std::vector<double> v(values.begin(), values.end());
  const std::size_t k = upper_rank(v.size(), alpha) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

double quantile_lo(std::span<const double> values, double alpha) {
  if (values.empty()) throw InvalidArgument("quantile of an empty list");
  check_alpha(alpha);
  std::vector<double> v(values.begin(), values.end());
  const std::size_t k = lower_rank(v.size(), alpha) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

// ---------------------------------------------------------------------------------------------
// Configuration and partitions

void MethodConfig::validate(std::size_t n) const {
  base_spec.validate();
  switch (family_of(method)) {
    case MethodFamily::jackknife:
      if (n < 3) throw InsufficientData("jackknife methods need n >= 3");
      break;
    case MethodFamily::cross_validation:
      if (folds < 2) throw ConfigError("CV methods need folds >= 2");
      if (static_cast<std::size_t>(folds) > n) throw InsufficientData("CV methods need n >= folds");
      break;
    case MethodFamily::after_bootstrap:
      if (bootstrap_count < 2) throw ConfigError("after-bootstrap methods need bootstrap_count >= 2");
      if (n < 2) throw InsufficientData("after-bootstrap methods need n >= 2");
      break;
    case MethodFamily::icp:
    case MethodFamily::cqr: {
      if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0))
        throw ConfigError("calibration_fraction must lie in (0, 1)");
      const auto n_cal = static_cast<std::size_t>(std::lround(calibration_fraction * static_cast<double>(n)));
      if (n_cal < 10) throw InsufficientData("calibration split needs at least 10 points");
      if (n_cal >= n) throw InsufficientData("calibration split leaves no training points");
      if (family_of(method) == MethodFamily::cqr && !(cqr_band > 0.0 && cqr_band < 1.0))
        throw ConfigError("cqr_band must lie in (0, 1)");
      if (family_of(method) == MethodFamily::icp) {
        if (difficulty_spec.kind != RegressorSpec::Kind::knn) throw ConfigError("ICP difficulty model must be knn");
        difficulty_spec.validate();
        if (n - n_cal < static_cast<std::size_t>(difficulty_spec.k))
          throw ConfigError("ICP difficulty model needs at least k training points");
        if (beta && !(*beta >= 0.0)) throw ConfigError("beta must be >= 0");
      }
      break;
    }
  }
}

CalibrationSplit calibration_split(std::size_t n, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  const auto n_cal = std::min<std::size_t>(n, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n))));
  CalibrationSplit s;
  s.calibration.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_cal));
  s.training.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_cal), perm.end());
  std::sort(s.calibration.begin(), s.calibration.end());
  std::sort(s.training.begin(), s.training.end());
  return s;
}

std::vector<std::uint32_t> fold_assignment(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 1) throw InvalidArgument("need at least one fold");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  const auto k = static_cast<std::size_t>(folds);
  std::vector<std::uint32_t> fold(n);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) fold[perm[pos++]] = static_cast<std::uint32_t>(f);
  }
  return fold;
}

// ---------------------------------------------------------------------------------------------
// ConformalModel

ConformalModel::Shared::Shared(State s) : state(std::move(s)) {
  if (const auto* r = std::get_if<ResamplingState>(&state)) sorted_scores = r->residuals;
  if (const auto* i = std::get_if<IcpState>(&state)) sorted_scores = i->scores;
  if (const auto* c = std::get_if<CqrState>(&state)) sorted_scores = c->scores;
  std::sort(sorted_scores.begin(), sorted_scores.end());
}

ConformalModel::ConformalModel(MethodConfig config, std::string fingerprint, std::size_t n_features, State state)
    : config_(std::move(config)),
      fingerprint_(std::move(fingerprint)),
      n_features_(n_features),
      shared_(std::make_shared<const Shared>(std::move(state))) {
  const auto fam = family_of(config_.method);
  const State& st = shared_->state;
  const bool ok = (fam == MethodFamily::icp && std::holds_alternative<IcpState>(st)) ||
                  (fam == MethodFamily::cqr && std::holds_alternative<CqrState>(st)) ||
                  (fam != MethodFamily::icp && fam != MethodFamily::cqr && std::holds_alternative<ResamplingState>(st));
  if (!ok) throw InvalidArgument("calibration state does not match the method");
  if (const auto* r = std::get_if<ResamplingState>(&st)) {
    if (r->models.empty() || r->held_out_by.size() != r->residuals.size() || r->residuals.empty())
      throw InvalidArgument("inconsistent resampling state");
    for (const auto& h : r->held_out_by)
      for (auto j : h)
        if (h.empty() || j >= r->models.size()) throw InvalidArgument("held-out model index out of range");
  }
  if (const auto* i = std::get_if<IcpState>(&st)) {
    if (i->scores.empty()) throw InvalidArgument("ICP state has no calibration scores");
  }
  if (const auto* c = std::get_if<CqrState>(&st)) {
    if (c->scores.empty() || c->calibration_rows.size() != c->scores.size())
      throw InvalidArgument("CQR state has inconsistent calibration data");
  }
}

ConformalModel ConformalModel::calibrate(const MethodConfig& config, const FeatureMatrix& x, std::span<const double> y) {
  if (x.rows() != y.size()) throw InvalidArgument("feature rows and targets differ in length");
  if (x.rows() == 0) throw InsufficientData("cannot calibrate on an empty dataset");
  config.validate(x.rows());
  const std::string fp = peloton::fingerprint(x, y);

  switch (family_of(config.method)) {
    case MethodFamily::icp: return {config, fp, x.cols(), calibrate_icp(config, x, y)};
    case MethodFamily::cqr: return {config, fp, x.cols(), calibrate_cqr(config, x, y)};
    default: break;
  }

  ResamplingPlan plan = make_plan(config, x.rows());
  const std::size_t m = plan.training_rows.size();
  std::vector<std::optional<Regressor>> fitted(m);
  detail::parallel_for(m, [&](std::size_t j) {
    const auto& rows = plan.training_rows[j];
    fitted[j] = Regressor::fit(model_spec(config), x.select_rows(rows), select(y, rows));
  });

  ResamplingState st;
  st.models.reserve(m);
  for (auto& f : fitted) st.models.push_back(std::move(*f));
  // Each model predicts the points it held out; R_i aggregates over held_out_by[i].
  std::vector<std::vector<double>> held_pred(m);
  for (std::size_t j = 0; j < m; ++j)
    for (auto i : plan.held_out_rows[j]) held_pred[j].push_back(st.models[j].predict(x.row(i)));
  std::vector<std::size_t> cursor(m, 0);
  st.residuals.resize(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double pred = aggregate(plan.held_out_by[i], [&](std::uint32_t j) { return held_pred[j][cursor[j]++]; });
    st.residuals[i] = std::abs(y[i] - pred);
  }
  st.held_out_by = std::move(plan.held_out_by);
  st.fold_of = std::move(plan.fold_of);
  st.bootstrap_samples = std::move(plan.bootstrap_samples);
  return {config, fp, x.cols(), std::move(st)};
}

void ConformalModel::check_width(std::span<const double> x) const {
  if (x.size() != n_features_)
    throw ModelError("feature vector has " + std::to_string(x.size()) + " columns, model expects " +
                     std::to_string(n_features_));
}

PredictionInterval ConformalModel::predict_interval(std::span<const double> x, double alpha) const {
  const double a[] = {alpha};
  return predict_intervals(x, a).front();
}

std::vector<PredictionInterval> ConformalModel::predict_intervals(std::span<const double> x,
                                                                  std::span<const double> alphas) const {
  check_width(x);
  for (double a : alphas) check_alpha(a);
  const Method method = config_.method;
  const State& st = shared_->state;

  if (const auto* r = std::get_if<ResamplingState>(&st)) {
    std::vector<double> model_pred(r->models.size());
    for (std::size_t j = 0; j < r->models.size(); ++j) model_pred[j] = r->models[j].predict(x);
    std::vector<double> loo(r->held_out_by.size());
    for (std::size_t i = 0; i < loo.size(); ++i)
      loo[i] = aggregate(r->held_out_by[i], [&](std::uint32_t j) { return model_pred[j]; });
    return resampling_intervals(method, loo, r->residuals, shared_->sorted_scores, alphas);
  }

  std::vector<PredictionInterval> out;
  out.reserve(alphas.size());
  if (const auto* icp = std::get_if<IcpState>(&st)) {
    const double centre = icp->base.predict(x);
    const double scale = std::max(icp->difficulty.predict_difficulty(x) + icp->beta, kMinNormaliser);
    const auto& s = shared_->sorted_scores;
    for (double a : alphas) {
      const double half = s[upper_rank(s.size(), a) - 1] * scale;
      out.push_back(ordered_interval(centre - half, centre + half, a, method));
    }
    return out;
  }

  const auto [lo, hi] = cqr_band(x);
  const auto& s = shared_->sorted_scores;
  for (double a : alphas) {
    const double q = s[upper_rank(s.size(), a) - 1];
    out.push_back(ordered_interval(lo - q, hi + q, a, method));
  }
  return out;
}

std::pair<double, double> ConformalModel::cqr_band(std::span<const double> x) const {
  check_width(x);
  const auto* cqr = std::get_if<CqrState>(&shared_->state);
  if (!cqr) throw ModelError("quantile bands exist only for CQR");
  return quantile_band(pooled(cqr->quantile_model, x), config_.cqr_band);
}

ConformalModel ConformalModel::as_method(Method m) const {
  if (family_of(m) != family_of(config_.method))
    throw InvalidArgument(std::string(to_string(m)) + " does not share calibration with " +
                          std::string(to_string(config_.method)));
  MethodConfig c = config_;
  c.method = m;
  return ConformalModel(std::move(c), fingerprint_, n_features_, shared_);
}

// ---------------------------------------------------------------------------------------------
// Batch evaluation

FamilyEvaluation evaluate_family(const MethodConfig& config, std::span<const Method> methods, const FeatureMatrix& x,
                                 std::span<const double> y, const FeatureMatrix& x_test,
                                 std::span<const double> alphas) {
  if (methods.empty()) throw InvalidArgument("no methods to evaluate");
  for (auto m : methods)
    if (family_of(m) != family_of(config.method)) throw InvalidArgument("methods must share one family");
  if (x_test.cols() != x.cols()) throw ModelError("test features do not match the training width");
  for (double a : alphas) check_alpha(a);

  FamilyEvaluation result;
  const std::size_t t_count = x_test.rows();
  const auto fam = family_of(config.method);

  if (fam == MethodFamily::icp || fam == MethodFamily::cqr) {
    const auto t0 = Clock::now();
    const auto model = ConformalModel::calibrate(config, x, y);
    result.calibration_seconds = seconds_since(t0);
    for (auto m : methods) {
      auto view = model.as_method(m);
      IntervalGrid grid;
      grid.reserve(t_count);
      for (std::size_t t = 0; t < t_count; ++t) grid.push_back(view.predict_intervals(x_test.row(t), alphas));
      result.intervals.emplace(m, std::move(grid));
    }
    return result;
  }

  // Resampling families: fit each model, keep only its predictions.
  if (x.rows() != y.size()) throw InvalidArgument("feature rows and targets differ in length");
  config.validate(x.rows());
  ResamplingPlan plan = make_plan(config, x.rows());
  const std::size_t m = plan.training_rows.size();
  std::vector<std::vector<double>> held_pred(m);
  std::vector<std::vector<double>> test_pred(m);
  std::vector<double> fit_seconds(m, 0.0);
  detail::parallel_for(m, [&](std::size_t j) {
    const auto tf = Clock::now();
    const auto& rows = plan.training_rows[j];
    const auto model = Regressor::fit(model_spec(config), x.select_rows(rows), select(y, rows));
    for (auto i : plan.held_out_rows[j]) held_pred[j].push_back(model.predict(x.row(i)));
    fit_seconds[j] = seconds_since(tf);
    test_pred[j].resize(t_count);
    for (std::size_t t = 0; t < t_count; ++t) test_pred[j][t] = model.predict(x_test.row(t));
  });

  std::vector<std::size_t> cursor(m, 0);
  std::vector<double> residuals(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double pred = aggregate(plan.held_out_by[i], [&](std::uint32_t j) { return held_pred[j][cursor[j]++]; });
    residuals[i] = std::abs(y[i] - pred);
  }
  std::vector<double> sorted_residuals = residuals;
  std::sort(sorted_residuals.begin(), sorted_residuals.end());
  // Wall time counts model fitting and held-out predictions, not the test rows.
  result.calibration_seconds = std::accumulate(fit_seconds.begin(), fit_seconds.end(), 0.0);

  for (auto method : methods) result.intervals.emplace(method, IntervalGrid(t_count));
  std::vector<double> loo(x.rows());
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < x.rows(); ++i)
      loo[i] = aggregate(plan.held_out_by[i], [&](std::uint32_t j) { return test_pred[j][t]; });
    for (auto method : methods)
      result.intervals[method][t] = resampling_intervals(method, loo, residuals, sorted_residuals, alphas);
  }
  return result;
}

}  // namespace peloton
