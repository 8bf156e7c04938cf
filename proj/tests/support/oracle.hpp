#pragma once

// Naive reference implementations used to check the library. Nothing here calls into the
// conformal layer: models, leave-out aggregates and rank selections are recomputed from scratch
// by enumeration. Only the random partitions (folds, bootstrap samples, calibration rows) are
// taken from a calibrated model, since those are inputs rather than results.

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

/// Integer rank arithmetic for alpha = percent / 100.
std::size_t upper_rank(std::size_t n, int percent);
std::size_t lower_rank(std::size_t n, int percent);

/// k-th smallest (1-based) found by counting, no sorting.
double kth_smallest(const std::vector<double>& v, std::size_t k);

/// Brute-force kNN on z-scored columns (population sd, 1 when constant); ties to lower index.
class Knn {
 public:
  Knn(int k, const Matrix& x, const std::vector<double>& y);
  std::vector<double> neighbour_targets(const std::vector<double>& q) const;
  double predict(const std::vector<double>& q) const;

 private:
  int k_;
  std::vector<double> mean_;
  std::vector<double> scale_;
  Matrix z_;
  std::vector<double> y_;
};

double linear_quantile(std::vector<double> values, double q);

struct Partitions {
  std::vector<std::uint32_t> fold_of;
  std::vector<std::vector<std::uint32_t>> bootstrap_samples;
  std::vector<std::size_t> calibration_rows;
};

struct Settings {
  int knn_k = 3;
  int difficulty_k = 3;
  int folds = 0;
  double cqr_band = 0.1;
};

enum class Kind { jackknife_plus, jackknife_minmax, jab_plus, jab_minmax, cv_plus, cv_minmax, cqr, icp };

/// Interval at x for alpha = percent / 100, crossing bounds collapsed to their midpoint.
std::pair<double, double> interval(Kind kind, const Settings& s, const Partitions& parts, const Matrix& x,
                                   const std::vector<double>& y, const std::vector<double>& x_test, int percent);

}  // namespace oracle
