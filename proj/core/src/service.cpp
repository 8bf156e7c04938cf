#include "peloton/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peloton/errors.hpp"
#include "peloton/random.hpp"

namespace peloton {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTagPoint = 301;
constexpr std::uint64_t kTagFamily = 302;

ServiceError bad_request(const std::string& what) { return ServiceError(400, "validation", what); }

// ---------------------------------------------------------------------------------------------
// JSON field access with 400s instead of type errors

const json& field(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) throw bad_request(std::string("missing field '") + key + "'");
  return *it;
}

double number(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_number()) throw bad_request(std::string("field '") + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw bad_request(std::string("field '") + key + "' must be finite");
  return d;
}

std::optional<double> optional_number(const json& obj, const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return number(obj, key);
}

std::string text(const json& obj, const char* key) {
  const json& v = field(obj, key);
  if (!v.is_string()) throw bad_request(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_text(const json& obj, const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return text(obj, key);
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const char* what) {
  for (const auto& [k, v] : obj.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* s) { return k == s; }))
      throw bad_request(std::string("unknown field '") + k + "' in " + what);
  }
}

json parse_object(std::string_view body, const char* what) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw bad_request(std::string(what) + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw bad_request(std::string(what) + " must be a JSON object");
  return j;
}

template <typename T, typename Parse>
T parse_enum(const json& obj, const char* key, Parse&& parse) {
  const auto s = text(obj, key);
  try {
    return parse(s);
  } catch (const InvalidArgument& e) {
    throw bad_request(e.what());
  }
}

json interval_json(const PredictionInterval& iv, const char* unit) {
  return {{std::string("lower_") + unit, iv.lower()}, {std::string("upper_") + unit, iv.upper()}};
}

json request_json(const ForecastRequest& r) {
  const auto& s = r.stage;
  json stage{{"race_name", s.race_name},
             {"race_date", s.race_date},
             {"race_type", to_string(s.race_type)},
             {"distance_km", s.distance},
             {"ascent_m", s.ascent},
             {"descent_m", s.descent},
             {"temperature_c", s.temperature},
             {"humidity", s.humidity},
             {"precip_intensity_mmh", s.precip_intensity},
             {"precip_prob", s.precip_probability},
             {"neg_wind_effect_ms", s.neg_wind_effect}};
  json j{{"stage", stage}, {"days_ahead", r.days_ahead}};
  if (s.rider_name) {
    j["rider"] = {{"rider_name", *s.rider_name},
                  {"bmi", s.bmi ? json(*s.bmi) : json(nullptr)},
                  {"rider_role", s.rider_role ? json(to_string(*s.rider_role)) : json(nullptr)}};
  } else {
    j["rider"] = nullptr;
  }
  if (!r.wind.empty()) {
    json w = json::array();
    for (const auto& x : r.wind)
      w.push_back({{"t_s", x.timestamp},
                   {"rider_bearing_deg", x.rider_bearing},
                   {"wind_bearing_deg", x.wind_bearing},
                   {"wind_speed_ms", x.wind_speed}});
    j["wind_samples"] = w;
  }
  if (r.alpha) j["alpha"] = *r.alpha;
  if (r.method) j["method"] = to_string(*r.method);
  if (r.model_version) j["model_version"] = *r.model_version;
  return j;
}

json response_json(const ForecastResponse& r) {
  json j{{"forecast_id", r.forecast_id},
         {"model_version", r.model_version},
         {"race_name", r.race_name},
         {"race_date", r.race_date},
         {"rider_name", r.rider_name ? json(*r.rider_name) : json(nullptr)},
         {"method", to_string(r.method)},
         {"alpha", r.alpha},
         {"days_ahead", r.days_ahead},
         {"weather_weight", r.weather_weight},
         {"blended", r.blended},
         {"distance_km", r.distance_km},
         {"speed_interval", interval_json(r.speed_interval, "kmh")},
         {"speed_point_kmh", r.speed_point},
         {"race_time_bounds", {{"lower_min", r.race_time_bounds.first}, {"upper_min", r.race_time_bounds.second}}}};
  j["power_interval"] = r.power_interval ? interval_json(*r.power_interval, "w") : json(nullptr);
  j["power_point_w"] = r.power_point ? json(*r.power_point) : json(nullptr);
  j["energy_bounds"] = r.energy_bounds ? json{{"lower_kcal", r.energy_bounds->first},
                                              {"upper_kcal", r.energy_bounds->second}}
                                       : json(nullptr);
  return j;
}

ForecastResponse response_from_json(const json& j) {
  ForecastResponse r;
  r.forecast_id = j.at("forecast_id").get<std::string>();
  r.model_version = j.at("model_version").get<std::string>();
  r.race_name = j.at("race_name").get<std::string>();
  r.race_date = j.at("race_date").get<std::string>();
  if (!j.at("rider_name").is_null()) r.rider_name = j.at("rider_name").get<std::string>();
  r.method = parse_method(j.at("method").get<std::string>());
  r.alpha = j.at("alpha").get<double>();
  r.days_ahead = j.at("days_ahead").get<double>();
  r.weather_weight = j.at("weather_weight").get<double>();
  r.blended = j.at("blended").get<bool>();
  r.distance_km = j.at("distance_km").get<double>();
  const auto& s = j.at("speed_interval");
  r.speed_interval = PredictionInterval(s.at("lower_kmh").get<double>(), s.at("upper_kmh").get<double>(), r.alpha, r.method);
  r.speed_point = j.at("speed_point_kmh").get<double>();
  const auto& t = j.at("race_time_bounds");
  r.race_time_bounds = {t.at("lower_min").get<double>(), t.at("upper_min").get<double>()};
  if (!j.at("power_interval").is_null()) {
    const auto& p = j.at("power_interval");
    r.power_interval = PredictionInterval(p.at("lower_w").get<double>(), p.at("upper_w").get<double>(), r.alpha, r.method);
    r.power_point = j.at("power_point_w").get<double>();
  }
  if (!j.at("energy_bounds").is_null()) {
    const auto& e = j.at("energy_bounds");
    r.energy_bounds = std::pair{e.at("lower_kcal").get<double>(), e.at("upper_kcal").get<double>()};
  }
  return r;
}

json record_json(const AdjustmentRecord& r) {
  return {{"adjustment_id", r.adjustment_id},
          {"forecast_id", r.forecast_id},
          {"race_name", r.race_name},
          {"rider_name", r.rider_name ? json(*r.rider_name) : json(nullptr)},
          {"chosen_speed_kmh", r.chosen_speed},
          {"chosen_power_w", r.chosen_power},
          {"race_time_min", r.race_time_min},
          {"energy_kcal", r.energy_kcal},
          {"author", r.author},
          {"timestamp", r.timestamp},
          {"speed_out_of_interval", r.speed_out_of_interval},
          {"power_out_of_interval", r.power_out_of_interval},
          {"out_of_interval", r.out_of_interval()}};
}

AdjustmentRecord record_from_json(const json& j) {
  AdjustmentRecord r;
  r.adjustment_id = j.at("adjustment_id").get<std::string>();
  r.forecast_id = j.at("forecast_id").get<std::string>();
  r.race_name = j.at("race_name").get<std::string>();
  if (!j.at("rider_name").is_null()) r.rider_name = j.at("rider_name").get<std::string>();
  r.chosen_speed = j.at("chosen_speed_kmh").get<double>();
  r.chosen_power = j.at("chosen_power_w").get<double>();
  r.race_time_min = j.at("race_time_min").get<double>();
  r.energy_kcal = j.at("energy_kcal").get<double>();
  r.author = j.at("author").get<std::string>();
  r.timestamp = j.at("timestamp").get<std::string>();
  r.speed_out_of_interval = j.at("speed_out_of_interval").get<bool>();
  r.power_out_of_interval = j.at("power_out_of_interval").get<bool>();
  return r;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  if (path.empty()) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw ModelError("cannot append to " + path.string());
  out << line << '\n';
  out.flush();
  if (!out) throw ModelError("failed writing " + path.string());
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  if (path.empty() || !std::filesystem::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      f(json::parse(line));
    } catch (const json::exception& e) {
      throw ModelError(path.string() + ":" + std::to_string(n) + ": unreadable log line: " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------------------------
// Artifact files

std::string spec_descriptor(const RegressorSpec& s) {
  std::ostringstream o;
  o << to_string(s.kind) << '/' << s.tree_count << '/' << (s.max_depth ? *s.max_depth : -1) << '/' << s.min_leaf_size
    << '/' << s.bootstrap << '/' << (s.features_per_split ? *s.features_per_split : -1) << '/' << s.k << '/' << s.seed;
  return o.str();
}

std::string options_descriptor(const TrainOptions& o) {
  std::ostringstream d;
  for (auto m : o.methods) d << to_string(m) << ',';
  const auto& c = o.method_defaults;
  d << "|folds=" << c.folds << "|b=" << c.bootstrap_count << "|cal=" << c.calibration_fraction << "|band=" << c.cqr_band
    << "|beta=" << (c.beta ? *c.beta : -1.0) << "|base=" << spec_descriptor(c.base_spec)
    << "|difficulty=" << spec_descriptor(c.difficulty_spec) << "|point=" << spec_descriptor(o.point_spec)
    << "|seed=" << o.seed;
  return d.str();
}

std::string layout_suffix(bool weather) { return weather ? "weather" : "no_weather"; }

}  // namespace

// ---------------------------------------------------------------------------------------------
// Configuration

ServiceConfig ServiceConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ServiceConfig c;
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "artifact_dir") c.artifact_dir = v.get<std::string>();
      else if (k == "adjustments_log") c.adjustments_log = v.get<std::string>();
      else if (k == "forecast_log") c.forecast_log = v.get<std::string>();
      else if (k == "speed_data") c.speed_data = v.is_null() ? std::nullopt : std::optional<std::filesystem::path>(v.get<std::string>());
      else if (k == "power_data") c.power_data = v.is_null() ? std::nullopt : std::optional<std::filesystem::path>(v.get<std::string>());
      else if (k == "default_method") c.default_method = parse_method(v.get<std::string>());
      else if (k == "default_alpha") c.default_alpha = v.get<double>();
      else if (k == "host") c.host = v.get<std::string>();
      else if (k == "port") c.port = v.get<int>();
      else throw ConfigError("unknown config key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config has a value of the wrong type: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.validate();
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

void ServiceConfig::apply_environment(const EnvLookup& lookup) {
  auto get = [&](const char* name) { return lookup(name); };
  try {
    if (auto v = get("PELOTON_ARTIFACT_DIR")) artifact_dir = *v;
    if (auto v = get("PELOTON_ADJUSTMENTS_LOG")) adjustments_log = *v;
    if (auto v = get("PELOTON_FORECAST_LOG")) forecast_log = *v;
    if (auto v = get("PELOTON_SPEED_DATA")) speed_data = *v;
    if (auto v = get("PELOTON_POWER_DATA")) power_data = *v;
    if (auto v = get("PELOTON_DEFAULT_METHOD")) default_method = parse_method(*v);
    if (auto v = get("PELOTON_DEFAULT_ALPHA")) default_alpha = std::stod(*v);
    if (auto v = get("PELOTON_HOST")) host = *v;
    if (auto v = get("PELOTON_PORT")) port = std::stoi(*v);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  } catch (const std::logic_error& e) {
    throw ConfigError(std::string("unparsable PELOTON_ environment value: ") + e.what());
  }
  validate();
}

void ServiceConfig::apply_environment() {
  apply_environment([](const std::string& name) -> std::optional<std::string> {
    const char* v = std::getenv(name.c_str());
    if (!v) return std::nullopt;
    return std::string(v);
  });
}

void ServiceConfig::validate() const {
  if (!(default_alpha > 0.0 && default_alpha < 0.5)) throw ConfigError("default_alpha must lie in (0, 0.5)");
  if (port < 0 || port > 65535) throw ConfigError("port must lie in [0, 65535]");
  if (host.empty()) throw ConfigError("host must not be empty");
}

// ---------------------------------------------------------------------------------------------
// Artifacts

TargetArtifact train_target(const Dataset& data, const TrainOptions& options) {
  if (data.empty()) throw InsufficientData("cannot train on an empty dataset");
  if (options.methods.empty()) throw ConfigError("train needs at least one method");

  std::map<Method, ConformalModel> layouts[2];
  std::optional<Regressor> points[2];
  for (int l = 0; l < 2; ++l) {
    const bool weather = l == 0;
    const FeatureLayout layout(data.target_kind, weather);
    const FeatureMatrix x = layout.encode(data);
    RegressorSpec ps = options.point_spec;
    ps.seed = derive_seed(options.seed, kTagPoint, static_cast<std::uint64_t>(l));
    points[l] = Regressor::fit(ps, x, data.targets);

    std::vector<MethodFamily> done;
    for (auto m : options.methods) {
      const auto fam = family_of(m);
      if (std::find(done.begin(), done.end(), fam) != done.end()) continue;
      done.push_back(fam);
      MethodConfig mc = options.method_defaults;
      mc.method = m;
      mc.seed = derive_seed(options.seed, kTagFamily, static_cast<std::uint64_t>(fam));
      const auto model = ConformalModel::calibrate(mc, x, data.targets);
      for (auto other : options.methods)
        if (family_of(other) == fam) layouts[l].emplace(other, model.as_method(other));
    }
  }
  const std::string data_fp = fingerprint(data);
  const std::string version =
      fingerprint(std::string(to_string(data.target_kind)) + "|" + data_fp + "|" + options_descriptor(options));
  return TargetArtifact{data.target_kind, data_fp, data.size(), version,
                        std::move(*points[0]), std::move(*points[1]), std::move(layouts[0]), std::move(layouts[1])};
}

void save_artifact(const TargetArtifact& a, const std::filesystem::path& dir) {
  const auto root = dir / std::string(to_string(a.target));
  std::filesystem::create_directories(root);
  json methods = json::array();
  json files = json::object();
  for (int l = 0; l < 2; ++l) {
    const bool weather = l == 0;
    const auto& models = weather ? a.weather : a.no_weather;
    const std::string point_name = "point_" + layout_suffix(weather) + ".json";
    (weather ? a.point_weather : a.point_no_weather).save(root / point_name);
    files["point_" + layout_suffix(weather)] = point_name;
    std::vector<MethodFamily> saved;
    for (const auto& [m, model] : models) {
      const auto fam = family_of(m);
      const std::string name = std::string(to_string(fam)) + "_" + layout_suffix(weather) + ".json";
      if (std::find(saved.begin(), saved.end(), fam) == saved.end()) {
        model.save(root / name);
        saved.push_back(fam);
      }
      if (weather) methods.push_back(to_string(m));
    }
  }
  const json manifest{{"format", "peloton.artifact"},
                      {"version", 1},
                      {"target", to_string(a.target)},
                      {"data_fingerprint", a.data_fingerprint},
                      {"rows", a.rows},
                      {"model_version", a.model_version},
                      {"methods", methods},
                      {"files", files}};
  std::ofstream out(root / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write " + (root / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

TargetArtifact load_artifact(const std::filesystem::path& dir, TargetKind target) {
  const auto root = dir / std::string(to_string(target));
  std::ifstream in(root / "manifest.json", std::ios::binary);
  if (!in) throw ModelError("no " + std::string(to_string(target)) + " artifact under " + dir.string());
  json manifest;
  try {
    manifest = json::parse(in);
    if (manifest.at("format") != "peloton.artifact" || manifest.at("version") != 1)
      throw ModelError("unsupported artifact manifest in " + root.string());
    if (manifest.at("target") != to_string(target)) throw ModelError("artifact manifest names another target");

    std::map<Method, ConformalModel> layouts[2];
    for (int l = 0; l < 2; ++l) {
      const bool weather = l == 0;
      std::map<MethodFamily, ConformalModel> by_family;
      for (const auto& name : manifest.at("methods")) {
        const Method m = parse_method(name.get<std::string>());
        const auto fam = family_of(m);
        auto it = by_family.find(fam);
        if (it == by_family.end())
          it = by_family
                   .emplace(fam, ConformalModel::load(root / (std::string(to_string(fam)) + "_" +
                                                              layout_suffix(weather) + ".json")))
                   .first;
        layouts[l].emplace(m, it->second.as_method(m));
      }
    }
    Regressor pw = Regressor::load(root / "point_weather.json");
    Regressor pn = Regressor::load(root / "point_no_weather.json");
    const FeatureLayout lw(target, true);
    const FeatureLayout ln(target, false);
    if (pw.n_features() != lw.width() || pn.n_features() != ln.width())
      throw ModelError("point model width does not match the feature layout");
    for (const auto& [m, model] : layouts[0])
      if (model.n_features() != lw.width()) throw ModelError("conformal model width does not match the layout");
    for (const auto& [m, model] : layouts[1])
      if (model.n_features() != ln.width()) throw ModelError("conformal model width does not match the layout");
    return TargetArtifact{target,
                          manifest.at("data_fingerprint").get<std::string>(),
                          manifest.at("rows").get<std::size_t>(),
                          manifest.at("model_version").get<std::string>(),
                          std::move(pw),
                          std::move(pn),
                          std::move(layouts[0]),
                          std::move(layouts[1])};
  } catch (const json::exception& e) {
    throw ModelError("malformed artifact manifest in " + root.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw ModelError("malformed artifact manifest in " + root.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------------------------
// Wire formats

std::pair<double, double> energy_bounds(double distance_km, const PredictionInterval& speed,
                                        const PredictionInterval& power) {
  const double times[] = {race_time_from_speed(distance_km, speed.lower()),
                          race_time_from_speed(distance_km, speed.upper())};
  const double powers[] = {power.lower(), power.upper()};
  double lo = compute_energy(powers[0], times[0]);
  double hi = lo;
  for (double p : powers)
    for (double t : times) {
      const double e = compute_energy(p, t);
      lo = std::min(lo, e);
      hi = std::max(hi, e);
    }
  return {lo, hi};
}

std::string to_json(const ForecastRequest& r) { return request_json(r).dump(); }
std::string to_json(const ForecastResponse& r) { return response_json(r).dump(); }
std::string to_json(const AdjustmentRecord& r) { return record_json(r).dump(); }

ForecastRequest parse_forecast_request(std::string_view body) {
  const json j = parse_object(body, "forecast request");
  reject_unknown(j, {"stage", "rider", "wind_samples", "days_ahead", "alpha", "method", "model_version"},
                 "forecast request");
  ForecastRequest r;
  const json& s = field(j, "stage");
  if (!s.is_object()) throw bad_request("field 'stage' must be an object");
  reject_unknown(s,
                 {"race_name", "race_date", "race_type", "distance_km", "ascent_m", "descent_m", "temperature_c",
                  "humidity", "precip_intensity_mmh", "precip_prob", "neg_wind_effect_ms"},
                 "stage");
  auto& st = r.stage;
  st.race_name = text(s, "race_name");
  st.race_date = text(s, "race_date");
  st.race_type = parse_enum<RaceType>(s, "race_type", parse_race_type);
  st.distance = number(s, "distance_km");
  st.ascent = number(s, "ascent_m");
  st.descent = number(s, "descent_m");
  st.temperature = number(s, "temperature_c");
  st.humidity = number(s, "humidity");
  st.precip_intensity = number(s, "precip_intensity_mmh");
  st.precip_probability = number(s, "precip_prob");

  if (j.contains("wind_samples") && !j.at("wind_samples").is_null()) {
    const json& w = j.at("wind_samples");
    if (!w.is_array()) throw bad_request("field 'wind_samples' must be an array");
    for (const auto& x : w) {
      if (!x.is_object()) throw bad_request("wind samples must be objects");
      r.wind.push_back({number(x, "t_s"), number(x, "rider_bearing_deg"), number(x, "wind_bearing_deg"),
                        number(x, "wind_speed_ms")});
    }
  }
  if (r.wind.empty())
    st.neg_wind_effect = number(s, "neg_wind_effect_ms");
  else
    st.neg_wind_effect = negative_wind_effect(r.wind);

  if (j.contains("rider") && !j.at("rider").is_null()) {
    const json& rd = j.at("rider");
    if (!rd.is_object()) throw bad_request("field 'rider' must be an object or null");
    reject_unknown(rd, {"rider_name", "bmi", "rider_role"}, "rider");
    st.rider_name = text(rd, "rider_name");
    st.bmi = number(rd, "bmi");
    st.rider_role = parse_enum<RiderRole>(rd, "rider_role", parse_rider_role);
  }
  r.days_ahead = number(j, "days_ahead");
  r.alpha = optional_number(j, "alpha");
  if (j.contains("method") && !j.at("method").is_null())
    r.method = parse_enum<Method>(j, "method", parse_method);
  r.model_version = optional_text(j, "model_version");
  return r;
}

AdjustmentRequest parse_adjustment_request(std::string_view body) {
  const json j = parse_object(body, "adjustment");
  reject_unknown(j, {"adjustment_id", "forecast_id", "chosen_speed_kmh", "chosen_power_w", "author", "timestamp"},
                 "adjustment");
  AdjustmentRequest r;
  r.adjustment_id = optional_text(j, "adjustment_id");
  r.forecast_id = text(j, "forecast_id");
  r.chosen_speed = number(j, "chosen_speed_kmh");
  r.chosen_power = number(j, "chosen_power_w");
  r.author = text(j, "author");
  r.timestamp = optional_text(j, "timestamp");
  return r;
}

// ---------------------------------------------------------------------------------------------
// Adjustment log

AdjustmentLog::AdjustmentLog(std::filesystem::path path) : path_(std::move(path)) {
  for_each_line(path_, [&](const json& j) {
    auto r = record_from_json(j);
    if (by_id_.count(r.adjustment_id)) return;
    by_id_.emplace(r.adjustment_id, records_.size());
    records_.push_back(std::move(r));
  });
}

std::pair<AdjustmentRecord, bool> AdjustmentLog::append(const AdjustmentRecord& record) {
  std::lock_guard lock(mutex_);
  if (auto it = by_id_.find(record.adjustment_id); it != by_id_.end()) {
    const auto& existing = records_[it->second];
    if (existing != record)
      throw ServiceError(409, "conflict", "adjustment " + record.adjustment_id + " already stored with other values");
    return {existing, false};
  }
  append_line(path_, to_json(record));
  by_id_.emplace(record.adjustment_id, records_.size());
  records_.push_back(record);
  return {record, true};
}

std::vector<AdjustmentRecord> AdjustmentLog::list(const std::optional<std::string>& race) const {
  std::lock_guard lock(mutex_);
  std::vector<AdjustmentRecord> out;
  for (const auto& r : records_)
    if (!race || r.race_name == *race) out.push_back(r);
  return out;
}

// ---------------------------------------------------------------------------------------------
// Service

ForecastService::ForecastService(ServiceConfig config)
    : config_(std::move(config)), adjustments_(config_.adjustments_log) {
  config_.validate();
  for_each_line(config_.forecast_log, [&](const json& j) {
    auto r = response_from_json(j);
    forecasts_.emplace(r.forecast_id, std::move(r));
  });
}

void ForecastService::load_artifacts() {
  auto speed = load_artifact(config_.artifact_dir, TargetKind::speed);
  auto power = load_artifact(config_.artifact_dir, TargetKind::power);
  auto check = [](const std::optional<std::filesystem::path>& data, const TargetArtifact& a) {
    if (!data) return;
    const auto d = load_dataset(*data, a.target);
    if (fingerprint(d) != a.data_fingerprint)
      throw ModelError("stale " + std::string(to_string(a.target)) + " artifact: trained on data " +
                       a.data_fingerprint + ", configured dataset is " + fingerprint(d));
  };
  check(config_.speed_data, speed);
  check(config_.power_data, power);
  set_artifacts(std::move(speed), std::move(power));
}

void ForecastService::set_artifacts(TargetArtifact speed, TargetArtifact power) {
  if (speed.target != TargetKind::speed || power.target != TargetKind::power)
    throw ModelError("artifacts are for the wrong targets");
  const std::string version = fingerprint(speed.model_version + ":" + power.model_version);
  auto loaded = std::make_shared<const Loaded>(Loaded{std::move(speed), std::move(power), version});
  std::lock_guard lock(loaded_mutex_);
  loaded_ = std::move(loaded);
}

bool ForecastService::ready() const {
  std::lock_guard lock(loaded_mutex_);
  return loaded_ != nullptr;
}

std::string ForecastService::model_version() const {
  std::lock_guard lock(loaded_mutex_);
  return loaded_ ? loaded_->model_version : std::string();
}

std::vector<Method> ForecastService::available_methods() const {
  std::shared_ptr<const Loaded> l;
  {
    std::lock_guard lock(loaded_mutex_);
    l = loaded_;
  }
  std::vector<Method> out;
  if (!l) return out;
  for (const auto& d : method_catalog())
    if (l->speed.has_method(d.method) && l->power.has_method(d.method)) out.push_back(d.method);
  return out;
}

ForecastResponse ForecastService::forecast(const ForecastRequest& request) {
  std::shared_ptr<const Loaded> l;
  {
    std::lock_guard lock(loaded_mutex_);
    l = loaded_;
  }
  if (!l) throw ServiceError(503, "unavailable", "model artifacts are not loaded");
  if (request.model_version && *request.model_version != l->model_version)
    throw ServiceError(409, "version_mismatch",
                       "request pins model " + *request.model_version + ", serving " + l->model_version);

  const Method method = request.method.value_or(config_.default_method);
  const double alpha = request.alpha.value_or(config_.default_alpha);
  if (!(alpha > 0.0 && alpha < 0.5)) throw bad_request("alpha must lie in (0, 0.5)");
  if (!std::isfinite(request.days_ahead) || request.days_ahead < 0.0) throw bad_request("days_ahead must be >= 0");
  if (!l->speed.has_method(method) || !l->power.has_method(method))
    throw bad_request("method " + std::string(to_string(method)) + " is not in the loaded artifacts");

  RawRaceRecord stage = request.stage;
  if (!request.wind.empty()) stage.neg_wind_effect = negative_wind_effect(request.wind);
  const bool rider = stage.rider_name.has_value();
  StageFeatures speed_features;
  std::optional<StageFeatures> power_features;
  try {
    speed_features = engineer_inputs(stage, TargetKind::speed);
    if (rider) power_features = engineer_inputs(stage, TargetKind::power);
  } catch (const ValidationError& e) {
    throw bad_request(e.what());
  }

  const double w = weather_weight(request.days_ahead);
  auto predict = [&](const TargetArtifact& a, const StageFeatures& f) {
    const auto xw = FeatureLayout(a.target, true).encode(f);
    const auto xn = FeatureLayout(a.target, false).encode(f);
    const auto iv = blend_intervals(a.weather.at(method).predict_interval(xw, alpha),
                                    a.no_weather.at(method).predict_interval(xn, alpha), w);
    const double pw = a.point_weather.predict(xw);
    const double point = w == 1.0 ? pw : w * pw + (1.0 - w) * a.point_no_weather.predict(xn);
    return std::pair{iv, point};
  };

  ForecastResponse r;
  r.model_version = l->model_version;
  r.race_name = stage.race_name;
  r.race_date = stage.race_date;
  r.rider_name = stage.rider_name;
  r.method = method;
  r.alpha = alpha;
  r.days_ahead = request.days_ahead;
  r.weather_weight = w;
  r.blended = w < 1.0;
  r.distance_km = stage.distance;
  std::tie(r.speed_interval, r.speed_point) = predict(l->speed, speed_features);
  if (!(r.speed_interval.lower() > 0.0))
    throw ServiceError(422, "model_output", "speed interval reaches zero; no race time can be derived");
  r.race_time_bounds = {race_time_from_speed(stage.distance, r.speed_interval.upper()),
                        race_time_from_speed(stage.distance, r.speed_interval.lower())};
  if (power_features) {
    auto [iv, point] = predict(l->power, *power_features);
    if (iv.lower() < 0.0) iv = PredictionInterval(0.0, std::max(0.0, iv.upper()), iv.alpha(), iv.method());
    r.power_interval = iv;
    r.power_point = point;
    r.energy_bounds = energy_bounds(stage.distance, r.speed_interval, iv);
  }

  ForecastRequest resolved = request;
  resolved.stage = stage;
  resolved.alpha = alpha;
  resolved.method = method;
  resolved.model_version.reset();
  r.forecast_id = fingerprint(to_json(resolved) + "|" + l->model_version);
  remember(r);
  return r;
}

void ForecastService::remember(const ForecastResponse& response) {
  std::lock_guard lock(forecasts_mutex_);
  if (forecasts_.count(response.forecast_id)) return;
  append_line(config_.forecast_log, to_json(response));
  forecasts_.emplace(response.forecast_id, response);
}

std::optional<ForecastResponse> ForecastService::find_forecast(const std::string& id) const {
  std::lock_guard lock(forecasts_mutex_);
  auto it = forecasts_.find(id);
  if (it == forecasts_.end()) return std::nullopt;
  return it->second;
}

std::pair<AdjustmentRecord, bool> ForecastService::record_adjustment(const AdjustmentRequest& request) {
  const auto f = find_forecast(request.forecast_id);
  if (!f) throw ServiceError(404, "not_found", "unknown forecast " + request.forecast_id);
  if (!(request.chosen_speed > 0.0)) throw bad_request("chosen_speed_kmh must be > 0");
  if (!(request.chosen_power >= 0.0)) throw bad_request("chosen_power_w must be >= 0");
  if (request.author.empty()) throw bad_request("author must not be empty");

  AdjustmentRecord r;
  r.forecast_id = request.forecast_id;
  r.race_name = f->race_name;
  r.rider_name = f->rider_name;
  r.chosen_speed = request.chosen_speed;
  r.chosen_power = request.chosen_power;
  r.race_time_min = race_time_from_speed(f->distance_km, request.chosen_speed);
  r.energy_kcal = compute_energy(request.chosen_power, r.race_time_min);
  r.author = request.author;
  r.timestamp = request.timestamp.value_or(utc_now());
  r.speed_out_of_interval = !f->speed_interval.contains(request.chosen_speed);
  r.power_out_of_interval = f->power_interval && !f->power_interval->contains(request.chosen_power);
  if (request.adjustment_id) {
    if (request.adjustment_id->empty()) throw bad_request("adjustment_id must not be empty");
    r.adjustment_id = *request.adjustment_id;
  } else {
    json key{{"forecast_id", r.forecast_id},
             {"chosen_speed_kmh", r.chosen_speed},
             {"chosen_power_w", r.chosen_power},
             {"author", r.author},
             {"timestamp", r.timestamp}};
    r.adjustment_id = fingerprint(key.dump());
  }
  return adjustments_.append(r);
}

std::vector<AdjustmentRecord> ForecastService::adjustments(const std::optional<std::string>& race) const {
  return adjustments_.list(race);
}

// ---------------------------------------------------------------------------------------------
// Routing

namespace {

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return {status, json{{"error", {{"code", code}, {"message", message}}}}.dump()};
}

}  // namespace

HttpReply handle_request(ForecastService& service, std::string_view method, std::string_view path,
                         const std::multimap<std::string, std::string>& query, std::string_view body) {
  try {
    if (path == "/v1/health") {
      if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
      const bool ready = service.ready();
      json j{{"status", ready ? "ok" : "unavailable"},
             {"model_version", ready ? json(service.model_version()) : json(nullptr)}};
      return {ready ? 200 : 503, j.dump()};
    }
    if (path == "/v1/methods") {
      if (method != "GET") return error_reply(405, "method_not_allowed", "use GET");
      const auto available = service.available_methods();
      json list = json::array();
      for (const auto& d : method_catalog())
        list.push_back({{"id", d.id},
                        {"name", d.display_name},
                        {"adaptive_width", d.adaptive_width},
                        {"training_fits", d.training_cost},
                        {"available", std::find(available.begin(), available.end(), d.method) != available.end()}});
      return {200, json{{"methods", list}, {"default_method", to_string(service.config().default_method)},
                        {"default_alpha", service.config().default_alpha}}
                       .dump()};
    }
    if (path == "/v1/forecast") {
      if (method != "POST") return error_reply(405, "method_not_allowed", "use POST");
      const auto response = service.forecast(parse_forecast_request(body));
      return {200, to_json(response)};
    }
    if (path == "/v1/adjustments") {
      if (method == "POST") {
        const auto [record, created] = service.record_adjustment(parse_adjustment_request(body));
        return {created ? 201 : 200, to_json(record)};
      }
      if (method == "GET") {
        std::optional<std::string> race;
        if (auto it = query.find("race"); it != query.end()) race = it->second;
        json list = json::array();
        for (const auto& r : service.adjustments(race)) list.push_back(json::parse(to_json(r)));
        return {200, json{{"adjustments", list}}.dump()};
      }
      return error_reply(405, "method_not_allowed", "use GET or POST");
    }
    return error_reply(404, "not_found", "no route for " + std::string(path));
  } catch (const ServiceError& e) {
    return error_reply(e.status(), e.code(), e.what());
  } catch (const ValidationError& e) {
    return error_reply(400, "validation", e.what());
  } catch (const InvalidArgument& e) {
    return error_reply(400, "validation", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

}  // namespace peloton
