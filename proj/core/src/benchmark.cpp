#include "peloton/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "csv.hpp"
#include "peloton/errors.hpp"
#include "peloton/random.hpp"

namespace peloton {

namespace {

constexpr std::uint64_t kTagRepeat = 201;
constexpr std::uint64_t kTagCell = 202;

const std::vector<std::string> kCurveHeader = {"method",     "alpha",        "error_rate",
                                               "mean_width", "width_stddev", "wall_time_s"};

double round12(double v) { return std::round(v * 1e12) / 1e12; }

struct Accumulator {
  std::vector<double> error_sum;
  std::vector<double> width_sum;
  std::vector<double> sd_sum;
  double seconds = 0.0;
  int cells = 0;
};

nlohmann::json learner_json(const RegressorSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"tree_count", s.tree_count},
          {"min_leaf_size", s.min_leaf_size},
          {"max_depth", s.max_depth ? nlohmann::json(*s.max_depth) : nlohmann::json(nullptr)},
          {"k", s.k}};
}

nlohmann::json manifest_config(const SweepConfig& c) {
  nlohmann::json out;
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(to_string(m));
  const auto& d = c.method_defaults;
  out = {{"alphas", c.alphas},
         {"repeats", c.repeats},
         {"folds", c.folds},
         {"methods", methods},
         {"seed", c.seed},
         {"include_weather", c.include_weather},
         {"method_folds", d.folds},
         {"bootstrap_count", d.bootstrap_count},
         {"calibration_fraction", d.calibration_fraction},
         {"cqr_band", d.cqr_band},
         {"base_learner", learner_json(d.base_spec)},
         {"difficulty_k", d.difficulty_spec.k}};
  out["beta"] = d.beta ? nlohmann::json(*d.beta) : nlohmann::json(nullptr);
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [family, spec] : c.family_base_specs) overrides[std::string(to_string(family))] = learner_json(spec);
  out["family_base_learners"] = overrides;
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::missing_file, "cannot write " + path.string());
  out << text;
  if (!out) throw DataError(DataError::Kind::missing_file, "failed writing " + path.string());
}

}  // namespace

std::vector<double> alpha_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw InvalidArgument("alpha grid needs step > 0 and hi >= lo");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = round12(lo + static_cast<double>(i) * step);
  return out;
}

void SweepConfig::validate() const {
  if (alphas.empty()) throw ConfigError("sweep needs at least one alpha");
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] > 0.0 && alphas[i] < 0.5)) throw ConfigError("sweep alphas must lie in (0, 0.5)");
    if (i > 0 && !(alphas[i] > alphas[i - 1])) throw ConfigError("sweep alphas must be strictly ascending");
  }
  if (repeats < 1) throw ConfigError("repeats must be >= 1");
  if (folds < 2) throw ConfigError("folds must be >= 2");
  if (methods.empty()) throw ConfigError("sweep needs at least one method");
  if (std::set<Method>(methods.begin(), methods.end()).size() != methods.size())
    throw ConfigError("sweep methods must be distinct");
  for (const auto& [family, spec] : family_base_specs) spec.validate();
}

const CurvePoint& BenchmarkCurve::at(double alpha) const {
  for (const auto& p : points)
    if (std::abs(p.alpha - alpha) < 1e-12) return p;
  throw InvalidArgument("curve for " + std::string(to_string(method)) + " has no point at alpha " +
                        std::to_string(alpha));
}

const BenchmarkCurve& SweepResult::curve(Method m) const {
  for (const auto& c : curves)
    if (c.method == m) return c;
  throw InvalidArgument("sweep has no curve for " + std::string(to_string(m)));
}

SweepResult run_sweep(const SweepConfig& config, const Dataset& data) {
  const FeatureLayout layout(data.target_kind, config.include_weather);
  return run_sweep(config, layout.encode(data), data.targets, data.target_kind);
}

SweepResult run_sweep(const SweepConfig& config, const FeatureMatrix& x, std::span<const double> y,
                      TargetKind target) {
  config.validate();
  if (x.rows() != y.size()) throw InvalidArgument("feature rows and targets differ in length");
  const std::size_t n = x.rows();
  if (n < static_cast<std::size_t>(config.folds)) throw InsufficientData("fewer rows than folds");

  SweepResult result;
  result.target = target;
  result.config = config;
  result.data_fingerprint = fingerprint(x, y);
  result.n = n;

  // Families in catalog order, each with the requested methods it contains.
  std::vector<std::pair<MethodFamily, std::vector<Method>>> families;
  for (const auto& d : method_catalog()) {
    if (std::find(config.methods.begin(), config.methods.end(), d.method) == config.methods.end()) continue;
    auto it = std::find_if(families.begin(), families.end(), [&](const auto& f) { return f.first == d.family; });
    if (it == families.end()) {
      families.push_back({d.family, {}});
      it = std::prev(families.end());
    }
    it->second.push_back(d.method);
  }

  const std::size_t n_alpha = config.alphas.size();
  std::map<Method, Accumulator> acc;
  for (auto m : config.methods) acc[m] = {std::vector<double>(n_alpha), std::vector<double>(n_alpha),
                                          std::vector<double>(n_alpha), 0.0, 0};

  for (int r = 0; r < config.repeats; ++r) {
    const auto fold_of = fold_assignment(n, config.folds, derive_seed(config.seed, kTagRepeat, static_cast<std::uint64_t>(r)));
    for (int f = 0; f < config.folds; ++f) {
      std::vector<std::size_t> train;
      std::vector<std::size_t> test;
      for (std::size_t i = 0; i < n; ++i) (fold_of[i] == static_cast<std::uint32_t>(f) ? test : train).push_back(i);
      const FeatureMatrix x_train = x.select_rows(train);
      const auto y_train = select(y, train);
      const FeatureMatrix x_test = x.select_rows(test);
      const auto y_test = select(y, test);
      const auto cell = static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(config.folds) +
                        static_cast<std::uint64_t>(f);

      for (const auto& [family, methods] : families) {
        if (result.failures.count(methods.front())) continue;
        MethodConfig mc = config.method_defaults;
        if (auto it = config.family_base_specs.find(family); it != config.family_base_specs.end())
          mc.base_spec = it->second;
        mc.method = methods.front();
        mc.seed = derive_seed(config.seed, kTagCell, cell);
        FamilyEvaluation eval;
        try {
          eval = evaluate_family(mc, methods, x_train, y_train, x_test, config.alphas);
        } catch (const std::exception& e) {
          for (auto m : methods) result.failures[m] = e.what();
          continue;
        }
        for (auto m : methods) {
          auto& a = acc[m];
          const auto& grid = eval.intervals.at(m);
          std::vector<double> widths(test.size());
          for (std::size_t k = 0; k < n_alpha; ++k) {
            std::size_t misses = 0;
            for (std::size_t t = 0; t < test.size(); ++t) {
              const auto& iv = grid[t][k];
              if (!iv.contains(y_test[t])) ++misses;
              widths[t] = iv.width();
            }
            const double mean = std::accumulate(widths.begin(), widths.end(), 0.0) / static_cast<double>(widths.size());
            double ss = 0.0;
            for (double w : widths) ss += (w - mean) * (w - mean);
            a.error_sum[k] += static_cast<double>(misses) / static_cast<double>(test.size());
            a.width_sum[k] += mean;
            a.sd_sum[k] += std::sqrt(ss / static_cast<double>(widths.size()));
          }
          a.seconds += eval.calibration_seconds;
          ++a.cells;
        }
      }
    }
  }

  for (const auto& d : method_catalog()) {
    auto it = acc.find(d.method);
    if (it == acc.end() || result.failures.count(d.method)) continue;
    const auto& a = it->second;
    const double cells = static_cast<double>(a.cells);
    BenchmarkCurve c;
    c.method = d.method;
    for (std::size_t k = 0; k < n_alpha; ++k)
      c.points.push_back({config.alphas[k], a.error_sum[k] / cells, a.width_sum[k] / cells, a.sd_sum[k] / cells,
                          a.seconds / cells});
    result.curves.push_back(std::move(c));
  }
  return result;
}

double recommend_alpha(const BenchmarkCurve& curve) {
  const auto& p = curve.points;
  if (p.size() < 4) throw InsufficientData("elbow needs at least 4 curve points");
  const double dx = p.back().alpha - p.front().alpha;
  const double dy = p.back().mean_width - p.front().mean_width;
  const double chord = std::hypot(dx, dy);
  // Distances within this margin count as ties so a straight line in floating point still picks
  // its first interior point.
  const double tie = 1e-12 * std::max(1.0, chord);
  std::size_t best = 1;
  double best_distance = -1.0;
  for (std::size_t i = 1; i + 1 < p.size(); ++i) {
    const double cross = dx * (p[i].mean_width - p.front().mean_width) - dy * (p[i].alpha - p.front().alpha);
    const double distance = chord > 0.0 ? std::abs(cross) / chord : 0.0;
    if (distance > best_distance + tie) {
      best_distance = distance;
      best = i;
    }
  }
  return p[best].alpha;
}

double mean_absolute_error(std::span<const double> predictions, std::span<const double> actuals) {
  if (predictions.size() != actuals.size()) throw InvalidArgument("predictions and actuals differ in length");
  if (predictions.empty()) throw InvalidArgument("metrics need at least one prediction");
  double s = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) s += std::abs(predictions[i] - actuals[i]);
  return s / static_cast<double>(actuals.size());
}

double r_squared(std::span<const double> predictions, std::span<const double> actuals) {
  if (predictions.size() != actuals.size()) throw InvalidArgument("predictions and actuals differ in length");
  if (predictions.empty()) throw InvalidArgument("metrics need at least one prediction");
  const double mean = std::accumulate(actuals.begin(), actuals.end(), 0.0) / static_cast<double>(actuals.size());
  double ss_res = 0.0;
  double ss_tot = 0.0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    ss_res += (actuals[i] - predictions[i]) * (actuals[i] - predictions[i]);
    ss_tot += (actuals[i] - mean) * (actuals[i] - mean);
  }
  if (ss_tot == 0.0) throw UndefinedMetric("R squared is undefined when the actuals have zero variance");
  return 1.0 - ss_res / ss_tot;
}

PointMetrics point_metrics(std::span<const double> predictions, std::span<const double> actuals) {
  return {mean_absolute_error(predictions, actuals), r_squared(predictions, actuals), actuals.size()};
}

ForecasterComparison compare_forecasters(std::span<const double> model_predictions,
                                         std::span<const double> baseline_predictions,
                                         std::span<const double> actuals) {
  ForecasterComparison c;
  c.model = point_metrics(model_predictions, actuals);
  c.baseline = point_metrics(baseline_predictions, actuals);
  if (c.baseline.mae == 0.0) throw UndefinedMetric("MAE reduction is undefined for a perfect baseline");
  c.mae_reduction_pct = 100.0 * (c.baseline.mae - c.model.mae) / c.baseline.mae;
  return c;
}

std::vector<std::filesystem::path> export_curves(std::span<const SweepResult> results, const std::filesystem::path& dir,
                                                 const ExportOptions& options) {
  if (results.empty()) throw InvalidArgument("nothing to export");
  std::set<TargetKind> seen;
  for (const auto& r : results) {
    if (r.curves.empty()) throw InvalidArgument("sweep for " + std::string(to_string(r.target)) + " has no curves");
    if (!seen.insert(r.target).second) throw InvalidArgument("one sweep per target may be exported");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError(DataError::Kind::missing_file, "cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::filesystem::path> written;
  nlohmann::json files = nlohmann::json::array();
  for (const auto& r : results) {
    const std::string name = "curves_" + std::string(to_string(r.target)) + ".csv";
    std::ostringstream out;
    csv::write_row(out, kCurveHeader);
    for (const auto& c : r.curves)
      for (const auto& p : c.points)
        csv::write_row(out, {std::string(to_string(c.method)), csv::format_double(p.alpha),
                             csv::format_double(p.error_rate), csv::format_double(p.mean_width),
                             csv::format_double(p.width_stddev),
                             options.include_timing && p.wall_time_s ? csv::format_double(*p.wall_time_s) : ""});
    write_text(dir / name, out.str());
    written.push_back(dir / name);

    nlohmann::json failures = nlohmann::json::object();
    for (const auto& [m, why] : r.failures) failures[std::string(to_string(m))] = why;
    files.push_back({{"target", to_string(r.target)},
                     {"csv", name},
                     {"rows", r.n},
                     {"data_fingerprint", r.data_fingerprint},
                     {"config", manifest_config(r.config)},
                     {"failures", failures}});
  }
  const nlohmann::json manifest{{"format", "peloton.benchmark"},
                                {"version", 1},
                                {"timing_recorded", options.include_timing},
                                {"exports", files}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  written.push_back(dir / "manifest.json");
  return written;
}

std::vector<BenchmarkCurve> import_curves(const std::filesystem::path& csv_path) {
  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::missing_file, "cannot open " + csv_path.string());
  std::size_t line = 0;
  const auto header = csv::read_row(in, line);
  if (!header || *header != kCurveHeader)
    throw DataError(DataError::Kind::schema_mismatch, csv_path.string() + ": unexpected curve header");
  std::vector<BenchmarkCurve> curves;
  std::size_t row = 0;
  while (auto cells = csv::read_row(in, line)) {
    ++row;
    if (cells->size() != kCurveHeader.size())
      throw DataError(DataError::Kind::malformed_csv, "row " + std::to_string(row) + ": expected 6 fields");
    const auto& c = *cells;
    Method m;
    try {
      m = parse_method(c[0]);
    } catch (const InvalidArgument& e) {
      throw ValidationError(row, "method", e.what());
    }
    CurvePoint p;
    double* targets[] = {&p.alpha, &p.error_rate, &p.mean_width, &p.width_stddev};
    for (std::size_t k = 0; k < 4; ++k) {
      const auto v = csv::parse_double(c[k + 1]);
      if (!v) throw ValidationError(row, kCurveHeader[k + 1], "not a number: '" + c[k + 1] + "'");
      *targets[k] = *v;
    }
    if (!c[5].empty()) {
      const auto v = csv::parse_double(c[5]);
      if (!v) throw ValidationError(row, "wall_time_s", "not a number: '" + c[5] + "'");
      p.wall_time_s = *v;
    }
    if (curves.empty() || curves.back().method != m) curves.push_back({m, {}});
    curves.back().points.push_back(p);
  }
  if (curves.empty()) throw DataError(DataError::Kind::empty_dataset, csv_path.string() + " has no curve rows");
  return curves;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

const char* const kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

bool is_adaptive(Method m) {
  for (const auto& d : method_catalog())
    if (d.method == m) return d.adaptive_width;
  return false;
}

struct Panel {
  double left, top, width, height;
  double x0, x1, y0, y1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
  double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }
};

void draw_panel(std::ostringstream& svg, const Panel& p, std::span<const BenchmarkCurve> curves, bool error_panel,
                std::string_view label) {
  svg << "<rect x=\"" << fixed(p.left) << "\" y=\"" << fixed(p.top) << "\" width=\"" << fixed(p.width)
      << "\" height=\"" << fixed(p.height) << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = p.x0 + (p.x1 - p.x0) * i / 4.0;
    const double yv = p.y0 + (p.y1 - p.y0) * i / 4.0;
    svg << "<text x=\"" << fixed(p.px(xv)) << "\" y=\"" << fixed(p.top + p.height + 16)
        << "\" font-size=\"11\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
    svg << "<text x=\"" << fixed(p.left - 6) << "\" y=\"" << fixed(p.py(yv) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
  }
  svg << "<text x=\"" << fixed(p.left + p.width / 2) << "\" y=\"" << fixed(p.top + p.height + 34)
      << "\" font-size=\"12\" text-anchor=\"middle\">alpha</text>\n";
  svg << "<text x=\"" << fixed(p.left + p.width / 2) << "\" y=\"" << fixed(p.top - 8)
      << "\" font-size=\"13\" text-anchor=\"middle\">" << label << "</text>\n";
  if (error_panel)
    svg << "<line x1=\"" << fixed(p.px(p.x0)) << "\" y1=\"" << fixed(p.py(p.x0)) << "\" x2=\"" << fixed(p.px(p.x1))
        << "\" y2=\"" << fixed(p.py(std::min(p.x1, p.y1))) << "\" stroke=\"#999\" stroke-width=\"1\"/>\n";

  for (const auto& curve : curves) {
    const bool adaptive = is_adaptive(curve.method);
    svg << "<polyline fill=\"none\" stroke=\"" << kPalette[static_cast<int>(curve.method) % 8]
        << "\" stroke-width=\"1.5\"" << (adaptive ? " stroke-dasharray=\"6 4\"" : "") << " points=\"";
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
      const auto& pt = curve.points[i];
      svg << (i ? " " : "") << fixed(p.px(pt.alpha)) << "," << fixed(p.py(error_panel ? pt.error_rate : pt.mean_width));
    }
    svg << "\"/>\n";
  }
}

}  // namespace

std::string render_svg(std::span<const BenchmarkCurve> curves, std::string_view title) {
  if (curves.empty()) throw InvalidArgument("nothing to plot");
  double a0 = 1.0, a1 = 0.0, w1 = 0.0, e1 = 0.0;
  for (const auto& c : curves)
    for (const auto& p : c.points) {
      a0 = std::min(a0, p.alpha);
      a1 = std::max(a1, p.alpha);
      w1 = std::max(w1, p.mean_width);
      e1 = std::max(e1, p.error_rate);
    }
  if (!(a1 > a0)) a1 = a0 + 0.01;
  if (!(w1 > 0.0)) w1 = 1.0;
  e1 = std::max(e1, a1);

  const Panel errors{70, 50, 360, 280, a0, a1, 0.0, e1 * 1.05};
  const Panel widths{520, 50, 360, 280, a0, a1, 0.0, w1 * 1.05};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1100\" height=\"400\" font-family=\"sans-serif\">\n";
  svg << "<text x=\"475\" y=\"20\" font-size=\"15\" text-anchor=\"middle\">" << title << "</text>\n";
  draw_panel(svg, errors, curves, true, "error rate");
  draw_panel(svg, widths, curves, false, "mean interval width");
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const auto m = curves[c].method;
    const double y = 60.0 + 18.0 * static_cast<double>(c);
    const bool adaptive = is_adaptive(m);
    svg << "<line x1=\"905\" y1=\"" << fixed(y) << "\" x2=\"935\" y2=\"" << fixed(y) << "\" stroke=\""
        << kPalette[static_cast<int>(m) % 8] << "\" stroke-width=\"1.5\""
        << (adaptive ? " stroke-dasharray=\"6 4\"" : "") << "/>\n";
    svg << "<text x=\"942\" y=\"" << fixed(y + 4) << "\" font-size=\"11\">" << to_string(m) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace peloton
