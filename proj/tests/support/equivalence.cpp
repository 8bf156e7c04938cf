#include "equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <variant>

#include "oracle.hpp"
#include "peloton/conformal.hpp"

namespace support {

namespace {

oracle::Kind kind_of(peloton::Method m) {
  using peloton::Method;
  switch (m) {
    case Method::jackknife_plus: return oracle::Kind::jackknife_plus;
    case Method::jackknife_minmax: return oracle::Kind::jackknife_minmax;
    case Method::jackknife_plus_after_bootstrap: return oracle::Kind::jab_plus;
    case Method::jackknife_minmax_after_bootstrap: return oracle::Kind::jab_minmax;
    case Method::cv_plus: return oracle::Kind::cv_plus;
    case Method::cv_minmax: return oracle::Kind::cv_minmax;
    case Method::cqr: return oracle::Kind::cqr;
    case Method::icp: return oracle::Kind::icp;
  }
  return oracle::Kind::icp;
}

oracle::Partitions partitions_of(const peloton::ConformalModel& model) {
  oracle::Partitions p;
  const auto& st = model.state();
  if (const auto* r = std::get_if<peloton::ResamplingState>(&st)) {
    p.fold_of = r->fold_of;
    p.bootstrap_samples = r->bootstrap_samples;
  } else if (const auto* i = std::get_if<peloton::IcpState>(&st)) {
    p.calibration_rows = i->calibration_rows;
  } else {
    p.calibration_rows = std::get<peloton::CqrState>(st).calibration_rows;
  }
  return p;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

EquivalenceReport check_oracle_equivalence(int datasets, std::uint64_t seed) {
  EquivalenceReport report;
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> alphas;
  std::vector<int> percents;
  for (int a = 1; a <= 20; ++a) {
    percents.push_back(a);
    alphas.push_back(a / 100.0);
  }

  for (int d = 0; d < datasets; ++d) {
    const std::size_t n = 13 + gen() % 8;
    const std::size_t p = 2 + gen() % 3;
    oracle::Matrix rows;
    std::vector<double> values;
    std::vector<double> y;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> r(p);
      for (auto& v : r) v = 10.0 * unit(gen);
      double t = 3.0 * r[0] - r[1] + (1.0 + r[0] / 5.0) * (unit(gen) - 0.5) * 4.0;
      rows.push_back(r);
      values.insert(values.end(), r.begin(), r.end());
      y.push_back(t);
    }
    const peloton::FeatureMatrix x(n, p, values);
    std::vector<std::vector<double>> tests;
    for (int t = 0; t < 4; ++t) {
      std::vector<double> r(p);
      for (auto& v : r) v = 12.0 * unit(gen) - 1.0;
      tests.push_back(r);
    }

    peloton::MethodConfig config;
    config.base_spec = peloton::RegressorSpec::knn(3);
    config.difficulty_spec = peloton::RegressorSpec::knn(3);
    config.folds = 2 + static_cast<int>(gen() % 4);
    config.bootstrap_count = 20;
    config.calibration_fraction = 10.2 / static_cast<double>(n);
    config.cqr_band = 0.05 + 0.05 * static_cast<double>(gen() % 4);
    config.seed = gen();
    oracle::Settings settings;
    settings.folds = config.folds;
    settings.cqr_band = config.cqr_band;

    for (auto method : peloton::all_methods()) {
      config.method = method;
      const auto model = peloton::ConformalModel::calibrate(config, x, y);
      const auto parts = partitions_of(model);
      for (const auto& t : tests) {
        const auto got = model.predict_intervals(t, alphas);
        for (std::size_t a = 0; a < percents.size(); ++a) {
          const auto [lo, hi] = oracle::interval(kind_of(method), settings, parts, rows, y, t, percents[a]);
          const double err = std::max(relative_error(lo, got[a].lower()), relative_error(hi, got[a].upper()));
          ++report.comparisons;
          report.max_relative_error = std::max(report.max_relative_error, err);
          if (err > 1e-9) {
            if (report.mismatches++ == 0) {
              std::ostringstream os;
              os << to_string(method) << " dataset " << d << " alpha " << alphas[a] << ": library [" << got[a].lower()
                 << ", " << got[a].upper() << "] oracle [" << lo << ", " << hi << "]";
              report.first_failure = os.str();
            }
          }
        }
      }
    }
    ++report.datasets;
  }
  return report;
}

}  // namespace support
