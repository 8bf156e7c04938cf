#pragma once

// Domain types shared by every module, plus the energy and interval arithmetic.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace peloton {

enum class RaceType { one_day, stage_race, grand_tour };
enum class RiderRole { helper, climber, leader };
enum class TargetKind { speed, power };

/// The eight conformal procedures.
enum class Method {
  jackknife_plus,
  jackknife_minmax,
  jackknife_plus_after_bootstrap,
  jackknife_minmax_after_bootstrap,
  cv_plus,
  cv_minmax,
  cqr,
  icp,
};

std::string_view to_string(RaceType v);
std::string_view to_string(RiderRole v);
std::string_view to_string(TargetKind v);
std::string_view to_string(Method v);

// Parsers throw InvalidArgument on unknown names.
RaceType parse_race_type(std::string_view s);
RiderRole parse_rider_role(std::string_view s);
TargetKind parse_target_kind(std::string_view s);
Method parse_method(std::string_view s);

/// All methods in declaration order.
std::vector<Method> all_methods();

/// Engineered input for one stage (speed) or one rider-stage (power).
///
/// `descent` is carried for provenance; the predictive fields are race_type, distance, ascent,
/// ascent_relation and the four weather fields, plus bmi and rider_role for power rows.
struct StageFeatures {
  RaceType race_type = RaceType::stage_race;
  double distance = 0.0;         // km
  double ascent = 0.0;           // m
  double descent = 0.0;          // m
  double ascent_relation = 0.0;  // ascent / max(descent, 1 m)
  double temperature = 0.0;      // °C
  double humidity = 0.0;         // fraction
  double neg_wind_effect = 0.0;  // m/s
  double rainfall = 0.0;         // mm/h, intensity x probability
  std::optional<double> bmi;
  std::optional<RiderRole> rider_role;

  friend bool operator==(const StageFeatures&, const StageFeatures&) = default;
};

/// Number of predictive fields a feature vector exposes for the given target (8 or 10).
int predictive_field_count(TargetKind kind);

class PredictionInterval {
 public:
  /// Throws InvalidArgument unless lower <= upper and 0 < alpha < 1.
  PredictionInterval(double lower, double upper, double alpha, Method method);

  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  double alpha() const noexcept { return alpha_; }
  Method method() const noexcept { return method_; }
  double width() const noexcept { return upper_ - lower_; }
  bool contains(double y) const noexcept { return lower_ <= y && y <= upper_; }

  friend bool operator==(const PredictionInterval&, const PredictionInterval&) = default;

 private:
  double lower_;
  double upper_;
  double alpha_;
  Method method_;
};

/// kcal from mean power (W) over race_time (minutes); 1 kJ of mechanical work is booked as 1 kcal.
double compute_energy(double power_w, double race_time_min);

/// Minutes needed to cover `distance_km` at `speed_kmh`.
double race_time_from_speed(double distance_km, double speed_kmh);

/// Weight given to the weather-aware model `days_ahead` days before the race.
/// Piecewise linear through (0, 1.0), (5, 0.9), (10, 0.5), (14, 0.1); 0.1 beyond two weeks.
double weather_weight(double days_ahead);

struct HorizonWeight {
  double days_ahead = 0.0;
  double weather_weight = 1.0;

  static HorizonWeight at(double days_ahead) { return {days_ahead, peloton::weather_weight(days_ahead)}; }
  double without_weather_weight() const noexcept { return 1.0 - weather_weight; }
};

/// Endpoint-wise convex combination `w * with_weather + (1 - w) * without_weather`.
PredictionInterval blend_intervals(const PredictionInterval& with_weather,
                                   const PredictionInterval& without_weather, double w);

/// Speed/power intervals for one rider-stage plus the coach's picks.
class EnergyForecast {
 public:
  EnergyForecast(double distance_km, PredictionInterval speed, PredictionInterval power)
      : distance_km_(distance_km), speed_(speed), power_(power) {}

  /// Records the coach's choice and derives race time and energy from it.
  void choose(double speed_kmh, double power_w);

  double distance_km() const noexcept { return distance_km_; }
  const PredictionInterval& speed_interval() const noexcept { return speed_; }
  const PredictionInterval& power_interval() const noexcept { return power_; }
  std::optional<double> chosen_speed() const noexcept { return chosen_speed_; }
  std::optional<double> chosen_power() const noexcept { return chosen_power_; }
  std::optional<double> race_time() const noexcept { return race_time_; }
  std::optional<double> energy() const noexcept { return energy_; }

  bool speed_within_interval() const noexcept { return chosen_speed_ && speed_.contains(*chosen_speed_); }
  bool power_within_interval() const noexcept { return chosen_power_ && power_.contains(*chosen_power_); }

 private:
  double distance_km_;
  PredictionInterval speed_;
  PredictionInterval power_;
  std::optional<double> chosen_speed_;
  std::optional<double> chosen_power_;
  std::optional<double> race_time_;
  std::optional<double> energy_;
};

}  // namespace peloton
