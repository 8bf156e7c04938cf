#include "peloton/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csv.hpp"
#include "peloton/errors.hpp"
#include "peloton/random.hpp"

namespace peloton {

namespace {

constexpr double kDescentFloor = 1.0;  // m

bool is_iso_date(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (s[i] < '0' || s[i] > '9') return false;
  const int month = (s[5] - '0') * 10 + (s[6] - '0');
  const int day = (s[8] - '0') * 10 + (s[9] - '0');
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

void require(bool ok, std::size_t row, const char* field, const std::string& detail) {
  if (!ok) throw ValidationError(row, field, detail);
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.target_kind = target_kind;
  out.records.reserve(indices.size());
  out.rows.reserve(indices.size());
  out.targets.reserve(indices.size());
  for (auto i : indices) {
    out.records.push_back(records[i]);
    out.rows.push_back(rows[i]);
    out.targets.push_back(targets[i]);
  }
  return out;
}

double ascent_relation(double ascent_m, double descent_m) {
  if (!(ascent_m >= 0.0) || !(descent_m >= 0.0)) throw InvalidArgument("ascent and descent must be non-negative");
  return ascent_m / std::max(descent_m, kDescentFloor);
}

double rainfall(double intensity_mmh, double probability) {
  if (!(probability >= 0.0 && probability <= 1.0)) throw InvalidArgument("precipitation probability must lie in [0, 1]");
  if (!(intensity_mmh >= 0.0)) throw InvalidArgument("precipitation intensity must be non-negative");
  return intensity_mmh * probability;
}

double negative_wind_effect(std::span<const WindSample> samples) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    // cos(difference) < 0 exactly when the difference lies strictly between 90° and 270°.
    double diff = std::fmod(s.wind_bearing - s.rider_bearing, 360.0);
    if (diff < 0.0) diff += 360.0;
    if (diff > 90.0 && diff < 270.0) {
      sum += s.wind_speed;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

void validate_inputs(const RawRaceRecord& r, TargetKind kind, std::size_t row) {
  require(!r.race_name.empty(), row, "race_name", "missing");
  require(is_iso_date(r.race_date), row, "race_date", "expected YYYY-MM-DD, got '" + r.race_date + "'");
  require(std::isfinite(r.distance) && r.distance > 0.0, row, "distance_km", "must be > 0");
  require(std::isfinite(r.ascent) && r.ascent >= 0.0, row, "ascent_m", "must be >= 0");
  require(std::isfinite(r.descent) && r.descent >= 0.0, row, "descent_m", "must be >= 0");
  require(std::isfinite(r.temperature), row, "temperature_c", "must be finite");
  require(r.humidity >= 0.0 && r.humidity <= 1.0, row, "humidity", "must lie in [0, 1]");
  require(std::isfinite(r.precip_intensity) && r.precip_intensity >= 0.0, row, "precip_intensity_mmh",
          "must be >= 0");
  require(r.precip_probability >= 0.0 && r.precip_probability <= 1.0, row, "precip_prob", "must lie in [0, 1]");
  require(std::isfinite(r.neg_wind_effect) && r.neg_wind_effect >= 0.0, row, "neg_wind_effect_ms", "must be >= 0");
  if (kind == TargetKind::power) {
    require(r.rider_name.has_value() && !r.rider_name->empty(), row, "rider_name", "missing");
    require(r.bmi.has_value() && std::isfinite(*r.bmi) && *r.bmi > 0.0, row, "bmi", "must be > 0");
    require(r.rider_role.has_value(), row, "rider_role", "missing");
  }
}

void validate_record(const RawRaceRecord& r, std::size_t row) {
  require(r.target_speed.has_value() != r.target_power.has_value(), row,
          r.target_speed ? "power_w" : "speed_kmh", "exactly one of speed_kmh / power_w must be set");
  validate_inputs(r, r.target_kind(), row);
  if (r.target_speed) {
    require(std::isfinite(*r.target_speed) && *r.target_speed > 0.0, row, "speed_kmh", "must be > 0");
  } else {
    require(std::isfinite(*r.target_power) && *r.target_power >= 0.0, row, "power_w", "must be >= 0");
  }
}

StageFeatures engineer_inputs(const RawRaceRecord& r, TargetKind kind) {
  validate_inputs(r, kind);
  StageFeatures f;
  f.race_type = r.race_type;
  f.distance = r.distance;
  f.ascent = r.ascent;
  f.descent = r.descent;
  f.ascent_relation = ascent_relation(r.ascent, r.descent);
  f.temperature = r.temperature;
  f.humidity = r.humidity;
  f.neg_wind_effect = r.neg_wind_effect;
  f.rainfall = rainfall(r.precip_intensity, r.precip_probability);
  if (kind == TargetKind::power) {
    f.bmi = r.bmi;
    f.rider_role = r.rider_role;
  }
  return f;
}

StageFeatures engineer_features(const RawRaceRecord& r) {
  validate_record(r);
  return engineer_inputs(r, r.target_kind());
}

StageFeatures engineer_features(const RawRaceRecord& r, std::span<const WindSample> wind) {
  RawRaceRecord copy = r;
  copy.neg_wind_effect = negative_wind_effect(wind);
  return engineer_features(copy);
}

Dataset make_dataset(TargetKind kind, std::vector<RawRaceRecord> records) {
  Dataset d;
  d.target_kind = kind;
  d.rows.reserve(records.size());
  d.targets.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    validate_record(r, i + 1);
    if (r.target_kind() != kind)
      throw ValidationError(i + 1, kind == TargetKind::speed ? "speed_kmh" : "power_w", "missing target");
    d.rows.push_back(engineer_features(r));
    d.targets.push_back(r.target());
  }
  d.records = std::move(records);
  return d;
}

// ---------------------------------------------------------------------------------------------
// Encoding

std::size_t FeatureLayout::width() const {
  std::size_t w = 3 + 3;  // race_type one-hot, distance, ascent, ascent_relation
  if (include_weather_) w += 4;
  if (kind_ == TargetKind::power) w += 1 + 3;  // bmi, rider_role one-hot
  return w;
}

std::vector<std::string> FeatureLayout::column_names() const {
  std::vector<std::string> names{"race_type=one_day", "race_type=stage_race", "race_type=grand_tour",
                                 "distance_km",       "ascent_m",            "ascent_relation"};
  if (include_weather_)
    for (const char* n : {"temperature_c", "humidity", "neg_wind_effect_ms", "rainfall_mmh"}) names.emplace_back(n);
  if (kind_ == TargetKind::power)
    for (const char* n : {"bmi", "rider_role=helper", "rider_role=climber", "rider_role=leader"}) names.emplace_back(n);
  return names;
}

std::vector<double> FeatureLayout::encode(const StageFeatures& f) const {
  std::vector<double> v;
  v.reserve(width());
  v.push_back(f.race_type == RaceType::one_day ? 1.0 : 0.0);
  v.push_back(f.race_type == RaceType::stage_race ? 1.0 : 0.0);
  v.push_back(f.race_type == RaceType::grand_tour ? 1.0 : 0.0);
  v.push_back(f.distance);
  v.push_back(f.ascent);
  if (!std::isfinite(f.ascent_relation)) throw InvalidArgument("ascent_relation must be finite");
  v.push_back(f.ascent_relation);
  if (include_weather_) {
    v.push_back(f.temperature);
    v.push_back(f.humidity);
    v.push_back(f.neg_wind_effect);
    v.push_back(f.rainfall);
  }
  if (kind_ == TargetKind::power) {
    if (!f.bmi || !f.rider_role) throw InvalidArgument("power features need bmi and rider_role");
    v.push_back(*f.bmi);
    v.push_back(*f.rider_role == RiderRole::helper ? 1.0 : 0.0);
    v.push_back(*f.rider_role == RiderRole::climber ? 1.0 : 0.0);
    v.push_back(*f.rider_role == RiderRole::leader ? 1.0 : 0.0);
  }
  return v;
}

FeatureMatrix FeatureLayout::encode(const Dataset& d) const {
  FeatureMatrix m(d.size(), width());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto v = encode(d.rows[i]);
    std::copy(v.begin(), v.end(), m.row(i).begin());
  }
  return m;
}

// ---------------------------------------------------------------------------------------------
// CSV

std::vector<std::string> csv_header(TargetKind kind) {
  if (kind == TargetKind::power)
    return {"race_name",     "race_date",   "race_type",   "distance_km",        "ascent_m",
            "descent_m",     "rider_name",  "bmi",         "rider_role",         "temperature_c",
            "humidity",      "precip_intensity_mmh",       "precip_prob",        "neg_wind_effect_ms",
            "power_w"};
  return {"race_name",     "race_date", "race_type",            "distance_km", "ascent_m",
          "descent_m",     "temperature_c", "humidity",         "precip_intensity_mmh",
          "precip_prob",   "neg_wind_effect_ms", "speed_kmh"};
}

namespace {

class RowReader {
 public:
  RowReader(const std::vector<std::string>& header, const csv::Row& cells, std::size_t row)
      : header_(header), cells_(cells), row_(row) {}

  const std::string& text(const char* field) const {
    const auto& c = cells_[index(field)];
    if (c.empty()) throw ValidationError(row_, field, "missing");
    return c;
  }

  double number(const char* field) const {
    const auto v = csv::parse_double(text(field));
    if (!v) throw ValidationError(row_, field, "not a number: '" + cells_[index(field)] + "'");
    return *v;
  }

 private:
  std::size_t index(const char* field) const {
    return static_cast<std::size_t>(std::find(header_.begin(), header_.end(), field) - header_.begin());
  }

  const std::vector<std::string>& header_;
  const csv::Row& cells_;
  std::size_t row_;
};

template <typename F>
auto categorical(std::size_t row, const char* field, F&& parse) {
  try {
    return parse();
  } catch (const InvalidArgument& e) {
    throw ValidationError(row, field, e.what());
  }
}

}  // namespace

Dataset read_dataset(std::istream& in, TargetKind kind) {
  std::size_t line = 0;
  auto header_row = csv::read_row(in, line);
  if (!header_row || (header_row->size() == 1 && header_row->front().empty()))
    throw DataError(DataError::Kind::empty_dataset, "dataset file is empty");
  if (!header_row->empty() && header_row->front().rfind("\xEF\xBB\xBF", 0) == 0) header_row->front().erase(0, 3);
  const auto header = csv_header(kind);
  if (*header_row != header)
    throw DataError(DataError::Kind::schema_mismatch,
                    "header does not match the " + std::string(to_string(kind)) + " schema");

  std::vector<RawRaceRecord> records;
  std::size_t row = 0;
  while (auto cells = csv::read_row(in, line)) {
    if (cells->size() == 1 && cells->front().empty()) continue;  // blank line
    ++row;
    if (cells->size() != header.size())
      throw DataError(DataError::Kind::malformed_csv, "row " + std::to_string(row) + ": expected " +
                                                          std::to_string(header.size()) + " fields, got " +
                                                          std::to_string(cells->size()));
    RowReader rr(header, *cells, row);
    RawRaceRecord r;
    r.race_name = rr.text("race_name");
    r.race_date = rr.text("race_date");
    r.race_type = categorical(row, "race_type", [&] { return parse_race_type(rr.text("race_type")); });
    r.distance = rr.number("distance_km");
    r.ascent = rr.number("ascent_m");
    r.descent = rr.number("descent_m");
    r.temperature = rr.number("temperature_c");
    r.humidity = rr.number("humidity");
    r.precip_intensity = rr.number("precip_intensity_mmh");
    r.precip_probability = rr.number("precip_prob");
    r.neg_wind_effect = rr.number("neg_wind_effect_ms");
    if (kind == TargetKind::power) {
      r.rider_name = rr.text("rider_name");
      r.bmi = rr.number("bmi");
      r.rider_role = categorical(row, "rider_role", [&] { return parse_rider_role(rr.text("rider_role")); });
      r.target_power = rr.number("power_w");
    } else {
      r.target_speed = rr.number("speed_kmh");
    }
    validate_record(r, row);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw DataError(DataError::Kind::empty_dataset, "dataset has no data rows");
  return make_dataset(kind, std::move(records));
}

Dataset load_dataset(const std::filesystem::path& path, TargetKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::missing_file, "cannot open dataset '" + path.string() + "'");
  return read_dataset(in, kind);
}

void write_dataset(std::ostream& out, const Dataset& d) {
  csv::write_row(out, csv_header(d.target_kind));
  for (const auto& r : d.records) {
    std::vector<std::string> cells{r.race_name, r.race_date, std::string(to_string(r.race_type)),
                                   csv::format_double(r.distance), csv::format_double(r.ascent),
                                   csv::format_double(r.descent)};
    if (d.target_kind == TargetKind::power) {
      cells.push_back(r.rider_name.value_or(""));
      cells.push_back(r.bmi ? csv::format_double(*r.bmi) : "");
      cells.push_back(r.rider_role ? std::string(to_string(*r.rider_role)) : "");
    }
    for (double v : {r.temperature, r.humidity, r.precip_intensity, r.precip_probability, r.neg_wind_effect})
      cells.push_back(csv::format_double(v));
    cells.push_back(csv::format_double(r.target()));
    csv::write_row(out, cells);
  }
}

void write_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataError::Kind::missing_file, "cannot write '" + path.string() + "'");
  write_dataset(out, d);
  if (!out) throw DataError(DataError::Kind::missing_file, "write to '" + path.string() + "' failed");
}

std::vector<WindSample> read_wind_samples(std::istream& in) {
  const std::vector<std::string> header{"t_s", "rider_bearing_deg", "wind_bearing_deg", "wind_speed_ms"};
  std::size_t line = 0;
  auto first = csv::read_row(in, line);
  if (!first) return {};
  if (*first != header) throw DataError(DataError::Kind::schema_mismatch, "wind sample header mismatch");
  std::vector<WindSample> out;
  std::size_t row = 0;
  while (auto cells = csv::read_row(in, line)) {
    if (cells->size() == 1 && cells->front().empty()) continue;
    ++row;
    if (cells->size() != header.size())
      throw DataError(DataError::Kind::malformed_csv, "row " + std::to_string(row) + ": expected 4 fields");
    RowReader rr(header, *cells, row);
    WindSample s{rr.number("t_s"), rr.number("rider_bearing_deg"), rr.number("wind_bearing_deg"),
                 rr.number("wind_speed_ms")};
    require(s.rider_bearing >= 0.0 && s.rider_bearing < 360.0, row, "rider_bearing_deg", "must lie in [0, 360)");
    require(s.wind_bearing >= 0.0 && s.wind_bearing < 360.0, row, "wind_bearing_deg", "must lie in [0, 360)");
    require(s.wind_speed >= 0.0, row, "wind_speed_ms", "must be >= 0");
    out.push_back(s);
  }
  return out;
}

std::vector<WindSample> load_wind_samples(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::missing_file, "cannot open wind samples '" + path.string() + "'");
  return read_wind_samples(in);
}

std::string fingerprint(const Dataset& d) {
  const FeatureLayout layout(d.target_kind, true);
  return fingerprint(layout.encode(d), d.targets);
}

// ---------------------------------------------------------------------------------------------
// Synthetic data

namespace {

// Mean speed (km/h) of a stage.
double synthetic_speed(const StageFeatures& f) {
  const double relief = std::min(f.ascent_relation, 3.0) - 1.0;
  double s = 44.5 - 1.1 * f.ascent / 1000.0;
  s -= 1.6 * relief * (f.distance / 185.0);
  s -= 0.004 * (f.distance - 185.0);
  s -= 0.22 * f.neg_wind_effect + 0.35 * f.rainfall;
  s -= 0.006 * (f.temperature - 21.0) * (f.temperature - 21.0);
  s -= 2.0 * std::max(0.0, f.humidity - 0.8);
  if (f.race_type == RaceType::one_day) s += 0.6;
  if (f.race_type == RaceType::grand_tour) s -= 0.7;
  return s;
}

// Mean power (W) of a rider over a stage.
double synthetic_power(const StageFeatures& f) {
  const double relief = std::min(f.ascent_relation, 3.0) - 1.0;
  double p = 215.0 + 11.0 * f.ascent / 1000.0;
  p += 18.0 * relief * (f.distance / 185.0);
  p += 0.06 * (f.distance - 185.0);
  p += 1.5 * f.neg_wind_effect + 2.0 * f.rainfall;
  p += 0.05 * (f.temperature - 20.0) * (f.temperature - 20.0);
  switch (*f.rider_role) {
    case RiderRole::climber: p += 18.0; break;
    case RiderRole::leader: p += 28.0; break;
    case RiderRole::helper: break;
  }
  p -= 4.0 * (*f.bmi - 21.0) * f.ascent / 1000.0;
  if (f.race_type == RaceType::one_day) p += 10.0;
  if (f.race_type == RaceType::grand_tour) p -= 6.0;
  return p;
}

std::string synthetic_date(std::size_t i) {
  // Spread rows over 2016-2023, month/day kept valid for every month.
  const int year = 2016 + static_cast<int>(i % 8);
  const int month = 1 + static_cast<int>((i / 8) % 12);
  const int day = 1 + static_cast<int>((i / 96) % 28);
  char buf[11];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day);
  return buf;
}

}  // namespace

Dataset generate_synthetic(std::size_t n, TargetKind kind, std::uint64_t seed, bool heteroscedastic) {
  if (n < 1) throw InvalidArgument("synthetic dataset needs n >= 1");
  Rng rng(derive_seed(seed, kind == TargetKind::speed ? 1 : 2));
  std::vector<RawRaceRecord> records;
  records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RawRaceRecord r;
    r.race_name = "Synthetic Race " + std::to_string(i / 21 + 1) + " Stage " + std::to_string(i % 21 + 1);
    r.race_date = synthetic_date(i);
    const double u = rng.uniform();
    r.race_type = u < 0.25 ? RaceType::one_day : (u < 0.65 ? RaceType::stage_race : RaceType::grand_tour);
    r.distance = rng.uniform(120.0, 250.0);
    r.ascent = rng.uniform(300.0, 4500.0);
    r.descent = rng.bernoulli(0.03) ? 0.0 : r.ascent * rng.uniform(0.5, 1.5);
    r.temperature = rng.uniform(5.0, 35.0);
    r.humidity = rng.uniform(0.35, 0.95);
    if (rng.bernoulli(0.35)) {
      r.precip_intensity = rng.uniform(0.1, 6.0);
      r.precip_probability = rng.uniform(0.2, 1.0);
    } else {
      r.precip_intensity = 0.0;
      r.precip_probability = rng.uniform(0.0, 0.3);
    }
    r.neg_wind_effect = rng.uniform(0.0, 8.0);
    if (kind == TargetKind::power) {
      r.rider_name = "Rider " + std::to_string(i % 30 + 1);
      r.bmi = rng.uniform(19.0, 23.0);
      const double v = rng.uniform();
      r.rider_role = v < 0.6 ? RiderRole::helper : (v < 0.8 ? RiderRole::climber : RiderRole::leader);
      r.target_power = 0.0;
    } else {
      r.target_speed = 1.0;
    }
    const StageFeatures f = engineer_features(r);
    // Noise scale grows linearly with ascent (0.3x to 2.0x of the base level).
    const double scale = heteroscedastic ? 0.3 + 1.7 * (r.ascent - 300.0) / 4200.0 : 1.0;
    const double z = rng.normal();
    if (kind == TargetKind::power) {
      r.target_power = std::max(0.0, synthetic_power(f) + 14.0 * scale * z);
    } else {
      r.target_speed = std::max(5.0, synthetic_speed(f) + 1.6 * scale * z);
    }
    records.push_back(std::move(r));
  }
  return make_dataset(kind, std::move(records));
}

}  // namespace peloton
