#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace support {

std::filesystem::path fresh_dir(std::string_view name) {
  auto dir = std::filesystem::temp_directory_path() / ("peloton_" + std::string(name));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

peloton::TrainOptions small_train_options() {
  peloton::TrainOptions o;
  o.methods = {peloton::Method::icp, peloton::Method::cqr, peloton::Method::cv_plus};
  o.method_defaults.base_spec = peloton::RegressorSpec::random_forest(0, 20);
  o.point_spec = peloton::RegressorSpec::random_forest(0, 20);
  o.seed = 11;
  return o;
}

const Artifacts& small_artifacts() {
  static const Artifacts a = [] {
    const auto opts = small_train_options();
    return Artifacts{peloton::train_target(peloton::generate_synthetic(240, peloton::TargetKind::speed, 3), opts),
                     peloton::train_target(peloton::generate_synthetic(400, peloton::TargetKind::power, 3), opts)};
  }();
  return a;
}

peloton::RawRaceRecord golden_stage() {
  peloton::RawRaceRecord r;
  r.race_name = "Tour de Test - Stage 4";
  r.race_date = "2024-07-04";
  r.race_type = peloton::RaceType::stage_race;
  r.distance = 180.0;
  r.ascent = 2100.0;
  r.descent = 1900.0;
  r.rider_name = "Rider A";
  r.bmi = 21.0;
  r.rider_role = peloton::RiderRole::helper;
  r.temperature = 24.0;
  r.humidity = 0.55;
  r.precip_intensity = 0.4;
  r.precip_probability = 0.3;
  r.neg_wind_effect = 2.5;
  return r;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

namespace {

std::optional<std::string> diff_at(const nlohmann::json& e, const nlohmann::json& a, double tol,
                                   const std::string& where) {
  if (e.is_number() && a.is_number()) {
    const double x = e.get<double>();
    const double y = a.get<double>();
    if (std::abs(x - y) <= tol * std::max({1.0, std::abs(x), std::abs(y)})) return std::nullopt;
    return where + " (" + e.dump() + " vs " + a.dump() + ")";
  }
  if (e.type() != a.type()) return where + " (type)";
  if (e.is_object()) {
    if (e.size() != a.size()) return where + " (keys)";
    for (const auto& [k, v] : e.items()) {
      if (!a.contains(k)) return where + "/" + k + " (missing)";
      if (auto d = diff_at(v, a.at(k), tol, where + "/" + k)) return d;
    }
    return std::nullopt;
  }
  if (e.is_array()) {
    if (e.size() != a.size()) return where + " (length)";
    for (std::size_t i = 0; i < e.size(); ++i)
      if (auto d = diff_at(e[i], a[i], tol, where + "/" + std::to_string(i))) return d;
    return std::nullopt;
  }
  if (e != a) return where + " (" + e.dump() + " vs " + a.dump() + ")";
  return std::nullopt;
}

}  // namespace

std::optional<std::string> json_difference(const nlohmann::json& expected, const nlohmann::json& actual,
                                           double rel_tol) {
  return diff_at(expected, actual, rel_tol, "");
}

}  // namespace support
