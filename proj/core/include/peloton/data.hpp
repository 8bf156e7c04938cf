#pragma once

// Ingestion, feature engineering and synthetic data for the race datasets.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "peloton/domain.hpp"
#include "peloton/matrix.hpp"

namespace peloton {

/// One CSV row before feature engineering. Exactly one of the two targets is set.
struct RawRaceRecord {
  std::string race_name;
  std::string race_date;  // YYYY-MM-DD
  RaceType race_type = RaceType::stage_race;
  double distance = 0.0;
  double ascent = 0.0;
  double descent = 0.0;
  std::optional<std::string> rider_name;
  std::optional<double> bmi;
  std::optional<RiderRole> rider_role;
  double temperature = 0.0;
  double humidity = 0.0;
  double precip_intensity = 0.0;
  double precip_probability = 0.0;
  double neg_wind_effect = 0.0;  // pre-computed from wind samples upstream
  std::optional<double> target_speed;
  std::optional<double> target_power;

  TargetKind target_kind() const { return target_speed ? TargetKind::speed : TargetKind::power; }
  double target() const { return target_speed ? *target_speed : target_power.value_or(0.0); }

  friend bool operator==(const RawRaceRecord&, const RawRaceRecord&) = default;
};

/// One GPS-derived sample; `wind_bearing` is the direction the wind blows toward.
struct WindSample {
  double timestamp = 0.0;     // s from stage start
  double rider_bearing = 0.0;  // degrees in [0, 360)
  double wind_bearing = 0.0;   // degrees in [0, 360)
  double wind_speed = 0.0;     // m/s

  friend bool operator==(const WindSample&, const WindSample&) = default;
};

struct Dataset {
  TargetKind target_kind = TargetKind::speed;
  std::vector<RawRaceRecord> records;
  std::vector<StageFeatures> rows;
  std::vector<double> targets;

  std::size_t size() const noexcept { return rows.size(); }
  bool empty() const noexcept { return rows.empty(); }

  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Feature engineering.

/// ascent / max(descent, 1 m).
double ascent_relation(double ascent_m, double descent_m);

/// Expected rainfall: intensity x probability.
double rainfall(double intensity_mmh, double probability);

/// Mean wind speed over samples where the wind has a component against the rider's heading
/// (cos of the bearing difference < 0); 0 when no sample qualifies.
double negative_wind_effect(std::span<const WindSample> samples);

/// Throws ValidationError naming the first offending field. `row` is only used for messages.
void validate_record(const RawRaceRecord& record, std::size_t row = 0);
/// Checks the model inputs only (no target); power inputs must name a rider with bmi and role.
void validate_inputs(const RawRaceRecord& record, TargetKind kind, std::size_t row = 0);

StageFeatures engineer_features(const RawRaceRecord& record);
/// As above, but the negative wind effect is recomputed from `wind`.
StageFeatures engineer_features(const RawRaceRecord& record, std::span<const WindSample> wind);
/// Features for forecasting a record that has no target yet.
StageFeatures engineer_inputs(const RawRaceRecord& record, TargetKind kind);

/// Validates and engineers every record; all records must carry a target of `kind`.
Dataset make_dataset(TargetKind kind, std::vector<RawRaceRecord> records);

// Model input encoding.

/// Maps StageFeatures to model columns. Categoricals are one-hot; the no-weather layout drops
/// temperature, humidity, negative wind effect and rainfall.
class FeatureLayout {
 public:
  FeatureLayout(TargetKind kind, bool include_weather) : kind_(kind), include_weather_(include_weather) {}

  TargetKind kind() const noexcept { return kind_; }
  bool include_weather() const noexcept { return include_weather_; }
  std::size_t width() const;
  std::vector<std::string> column_names() const;

  std::vector<double> encode(const StageFeatures& f) const;
  FeatureMatrix encode(const Dataset& d) const;

  friend bool operator==(const FeatureLayout&, const FeatureLayout&) = default;

 private:
  TargetKind kind_;
  bool include_weather_;
};

// CSV files.

std::vector<std::string> csv_header(TargetKind kind);

Dataset read_dataset(std::istream& in, TargetKind kind);
Dataset load_dataset(const std::filesystem::path& path, TargetKind kind);
void write_dataset(std::ostream& out, const Dataset& d);
void write_dataset(const std::filesystem::path& path, const Dataset& d);

std::vector<WindSample> read_wind_samples(std::istream& in);
std::vector<WindSample> load_wind_samples(const std::filesystem::path& path);

/// Fingerprint of the engineered training data (feature values and targets).
std::string fingerprint(const Dataset& d);

// Synthetic data.

/// Deterministic synthetic dataset; see docs/synthetic_data.md for the generating functions.
/// When `heteroscedastic`, the noise scale grows with stage ascent.
Dataset generate_synthetic(std::size_t n, TargetKind kind, std::uint64_t seed, bool heteroscedastic = false);

}  // namespace peloton
