#include "peloton/domain.hpp"

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "peloton/errors.hpp"

namespace peloton {

namespace {

constexpr std::array<std::pair<RaceType, std::string_view>, 3> kRaceTypes{{
    {RaceType::one_day, "one_day"},
    {RaceType::stage_race, "stage_race"},
    {RaceType::grand_tour, "grand_tour"},
}};

constexpr std::array<std::pair<RiderRole, std::string_view>, 3> kRiderRoles{{
    {RiderRole::helper, "helper"},
    {RiderRole::climber, "climber"},
    {RiderRole::leader, "leader"},
}};

constexpr std::array<std::pair<TargetKind, std::string_view>, 2> kTargetKinds{{
    {TargetKind::speed, "speed"},
    {TargetKind::power, "power"},
}};

constexpr std::array<std::pair<Method, std::string_view>, 8> kMethods{{
    {Method::jackknife_plus, "jackknife_plus"},
    {Method::jackknife_minmax, "jackknife_minmax"},
    {Method::jackknife_plus_after_bootstrap, "jackknife_plus_after_bootstrap"},
    {Method::jackknife_minmax_after_bootstrap, "jackknife_minmax_after_bootstrap"},
    {Method::cv_plus, "cv_plus"},
    {Method::cv_minmax, "cv_minmax"},
    {Method::cqr, "cqr"},
    {Method::icp, "icp"},
}};

template <typename E, std::size_t N>
std::string_view name_of(const std::array<std::pair<E, std::string_view>, N>& table, E v) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  return "unknown";
}

template <typename E, std::size_t N>
E parse_name(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s,
             const char* what) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  throw InvalidArgument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

// (days, weight) anchors of the horizon schedule.
constexpr std::array<std::pair<double, double>, 4> kHorizonAnchors{{
    {0.0, 1.0},
    {5.0, 0.9},
    {10.0, 0.5},
    {14.0, 0.1},
}};

}  // namespace

std::string_view to_string(RaceType v) { return name_of(kRaceTypes, v); }
std::string_view to_string(RiderRole v) { return name_of(kRiderRoles, v); }
std::string_view to_string(TargetKind v) { return name_of(kTargetKinds, v); }
std::string_view to_string(Method v) { return name_of(kMethods, v); }

RaceType parse_race_type(std::string_view s) { return parse_name(kRaceTypes, s, "race type"); }
RiderRole parse_rider_role(std::string_view s) { return parse_name(kRiderRoles, s, "rider role"); }
TargetKind parse_target_kind(std::string_view s) { return parse_name(kTargetKinds, s, "target kind"); }
Method parse_method(std::string_view s) { return parse_name(kMethods, s, "method"); }

std::vector<Method> all_methods() {
  return {Method::jackknife_plus, Method::jackknife_minmax, Method::jackknife_plus_after_bootstrap,
          Method::jackknife_minmax_after_bootstrap, Method::cv_plus, Method::cv_minmax, Method::cqr, Method::icp};
}

int predictive_field_count(TargetKind kind) { return kind == TargetKind::speed ? 8 : 10; }

PredictionInterval::PredictionInterval(double lower, double upper, double alpha, Method method)
    : lower_(lower), upper_(upper), alpha_(alpha), method_(method) {
  if (!(lower <= upper))
    throw InvalidArgument("interval lower bound " + std::to_string(lower) + " exceeds upper bound " +
                          std::to_string(upper));
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("alpha must lie in (0, 1)");
}

double compute_energy(double power_w, double race_time_min) {
  if (!(race_time_min > 0.0)) throw InvalidArgument("race time must be positive");
  if (!(power_w >= 0.0)) throw InvalidArgument("power must be non-negative");
  return power_w * race_time_min * 60.0 / 1000.0;
}

double race_time_from_speed(double distance_km, double speed_kmh) {
  if (!(speed_kmh > 0.0)) throw InvalidArgument("speed must be positive");
  if (!(distance_km > 0.0)) throw InvalidArgument("distance must be positive");
  return 60.0 * distance_km / speed_kmh;
}

double weather_weight(double days_ahead) {
  if (!(days_ahead >= 0.0)) throw InvalidArgument("days_ahead must be non-negative");
  for (std::size_t i = 1; i < kHorizonAnchors.size(); ++i) {
    const auto [d0, w0] = kHorizonAnchors[i - 1];
    const auto [d1, w1] = kHorizonAnchors[i];
    if (days_ahead == d1) return w1;
    if (days_ahead < d1) {
      if (days_ahead == d0) return w0;
      return w0 + (w1 - w0) * (days_ahead - d0) / (d1 - d0);
    }
  }
  return kHorizonAnchors.back().second;
}

PredictionInterval blend_intervals(const PredictionInterval& with_weather,
                                   const PredictionInterval& without_weather, double w) {
  if (with_weather.alpha() != without_weather.alpha())
    throw InvalidArgument("cannot blend intervals with different alpha");
  if (with_weather.method() != without_weather.method())
    throw InvalidArgument("cannot blend intervals from different methods");
  if (!(w >= 0.0 && w <= 1.0)) throw InvalidArgument("blend weight must lie in [0, 1]");
  if (w == 1.0) return with_weather;
  if (w == 0.0) return without_weather;
  double lower = w * with_weather.lower() + (1.0 - w) * without_weather.lower();
  double upper = w * with_weather.upper() + (1.0 - w) * without_weather.upper();
  // Rounding can push the two sums past each other when the inputs nearly coincide.
  if (upper < lower) upper = lower;
  return {lower, upper, with_weather.alpha(), with_weather.method()};
}

void EnergyForecast::choose(double speed_kmh, double power_w) {
  const double t = race_time_from_speed(distance_km_, speed_kmh);
  const double e = compute_energy(power_w, t);
  chosen_speed_ = speed_kmh;
  chosen_power_ = power_w;
  race_time_ = t;
  energy_ = e;
}

}  // namespace peloton
