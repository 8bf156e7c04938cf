#pragma once

// Operational surface: trained artifacts, interval forecasts with weather blending and energy
// bounds, the coach adjustment log, and the JSON HTTP API on top of them.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "peloton/conformal.hpp"
#include "peloton/data.hpp"
#include "peloton/domain.hpp"
#include "peloton/regressors.hpp"

namespace peloton {

struct ServiceConfig {
  std::filesystem::path artifact_dir = "artifacts";
  std::filesystem::path adjustments_log = "adjustments.ndjson";
  std::filesystem::path forecast_log = "forecasts.ndjson";
  // When set, artifacts trained on anything else are refused.
  std::optional<std::filesystem::path> speed_data;
  std::optional<std::filesystem::path> power_data;
  Method default_method = Method::icp;
  double default_alpha = 0.10;
  std::string host = "127.0.0.1";
  int port = 8080;

  /// JSON object with the keys above; unknown keys are a ConfigError.
  static ServiceConfig from_json(std::string_view text);
  static ServiceConfig load(const std::filesystem::path& path);

  using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
  /// PELOTON_ARTIFACT_DIR, PELOTON_ADJUSTMENTS_LOG, PELOTON_FORECAST_LOG, PELOTON_SPEED_DATA,
  /// PELOTON_POWER_DATA, PELOTON_DEFAULT_METHOD, PELOTON_DEFAULT_ALPHA, PELOTON_HOST, PELOTON_PORT.
  void apply_environment(const EnvLookup& lookup);
  void apply_environment();

  void validate() const;
};

// Artifacts

struct TrainOptions {
  std::vector<Method> methods = {Method::icp, Method::cqr};
  MethodConfig method_defaults;
  RegressorSpec point_spec = RegressorSpec::random_forest();
  std::uint64_t seed = 0;
};

/// Everything served for one target: point models and conformal models for the weather and
/// no-weather feature layouts.
struct TargetArtifact {
  TargetKind target = TargetKind::speed;
  std::string data_fingerprint;  // fingerprint of the training Dataset
  std::size_t rows = 0;
  std::string model_version;
  Regressor point_weather;
  Regressor point_no_weather;
  std::map<Method, ConformalModel> weather;
  std::map<Method, ConformalModel> no_weather;

  bool has_method(Method m) const { return weather.count(m) && no_weather.count(m); }
};

TargetArtifact train_target(const Dataset& data, const TrainOptions& options);
/// Writes <dir>/<target>/manifest.json plus one file per model.
void save_artifact(const TargetArtifact& artifact, const std::filesystem::path& dir);
/// Throws ModelError for a missing, unreadable or inconsistent artifact.
TargetArtifact load_artifact(const std::filesystem::path& dir, TargetKind target);

// Requests and responses

struct ForecastRequest {
  RawRaceRecord stage;             // targets unset; rider fields only for power
  std::vector<WindSample> wind;    // when non-empty, replaces stage.neg_wind_effect
  double days_ahead = 0.0;
  std::optional<double> alpha;
  std::optional<Method> method;
  std::optional<std::string> model_version;  // 409 when it differs from the loaded artifacts
};

struct ForecastResponse {
  std::string forecast_id;
  std::string model_version;
  std::string race_name;
  std::string race_date;
  std::optional<std::string> rider_name;
  Method method = Method::icp;
  double alpha = 0.1;
  double days_ahead = 0.0;
  double weather_weight = 1.0;
  bool blended = false;
  double distance_km = 0.0;
  PredictionInterval speed_interval{0.0, 0.0, 0.1, Method::icp};
  double speed_point = 0.0;
  std::pair<double, double> race_time_bounds;  // minutes at speed upper / lower
  std::optional<PredictionInterval> power_interval;
  std::optional<double> power_point;
  std::optional<std::pair<double, double>> energy_bounds;  // kcal
};

/// min / max of compute_energy over the four (power endpoint, time at speed endpoint) corners.
std::pair<double, double> energy_bounds(double distance_km, const PredictionInterval& speed,
                                        const PredictionInterval& power);

struct AdjustmentRequest {
  std::optional<std::string> adjustment_id;  // derived from the content when absent
  std::string forecast_id;
  double chosen_speed = 0.0;
  double chosen_power = 0.0;
  std::string author;
  std::optional<std::string> timestamp;  // server UTC time when absent
};

struct AdjustmentRecord {
  std::string adjustment_id;
  std::string forecast_id;
  std::string race_name;
  std::optional<std::string> rider_name;
  double chosen_speed = 0.0;
  double chosen_power = 0.0;
  double race_time_min = 0.0;
  double energy_kcal = 0.0;
  std::string author;
  std::string timestamp;
  bool speed_out_of_interval = false;
  bool power_out_of_interval = false;

  bool out_of_interval() const noexcept { return speed_out_of_interval || power_out_of_interval; }

  friend bool operator==(const AdjustmentRecord&, const AdjustmentRecord&) = default;
};

std::string to_json(const ForecastRequest& r);
std::string to_json(const ForecastResponse& r);
std::string to_json(const AdjustmentRecord& r);
ForecastRequest parse_forecast_request(std::string_view body);
AdjustmentRequest parse_adjustment_request(std::string_view body);

/// Carries the HTTP status the API maps an error to.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, std::string code, const std::string& what)
      : std::runtime_error(what), status_(status), code_(std::move(code)) {}

  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }

 private:
  int status_;
  std::string code_;
};

/// Append-only NDJSON log keyed by adjustment id; one writer at a time.
class AdjustmentLog {
 public:
  explicit AdjustmentLog(std::filesystem::path path);

  /// Returns the stored record and whether it was new. Replaying an id with identical content is
  /// a no-op; different content under a known id is a 409 ServiceError.
  std::pair<AdjustmentRecord, bool> append(const AdjustmentRecord& record);
  std::vector<AdjustmentRecord> list(const std::optional<std::string>& race) const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<AdjustmentRecord> records_;
  std::map<std::string, std::size_t> by_id_;
};

class ForecastService {
 public:
  explicit ForecastService(ServiceConfig config);

  /// Loads both targets from config.artifact_dir and checks them against the configured
  /// datasets. Throws ModelError and stays unready on failure.
  void load_artifacts();
  void set_artifacts(TargetArtifact speed, TargetArtifact power);

  bool ready() const;
  std::string model_version() const;
  const ServiceConfig& config() const noexcept { return config_; }
  /// Methods available for both targets, catalog order.
  std::vector<Method> available_methods() const;

  /// Throws ServiceError (400 validation, 409 version mismatch, 503 not ready).
  ForecastResponse forecast(const ForecastRequest& request);
  /// Throws ServiceError (400 validation, 404 unknown forecast, 409 conflicting replay).
  std::pair<AdjustmentRecord, bool> record_adjustment(const AdjustmentRequest& request);
  std::vector<AdjustmentRecord> adjustments(const std::optional<std::string>& race) const;
  std::optional<ForecastResponse> find_forecast(const std::string& id) const;

 private:
  struct Loaded {
    TargetArtifact speed;
    TargetArtifact power;
    std::string model_version;
  };

  void remember(const ForecastResponse& response);

  ServiceConfig config_;
  std::shared_ptr<const Loaded> loaded_;
  mutable std::mutex loaded_mutex_;
  mutable std::mutex forecasts_mutex_;
  std::map<std::string, ForecastResponse> forecasts_;
  AdjustmentLog adjustments_;
};

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Routes one request; transport-free so it can be exercised directly.
HttpReply handle_request(ForecastService& service, std::string_view method, std::string_view path,
                         const std::multimap<std::string, std::string>& query, std::string_view body);

/// The API on a real socket. start() binds (port 0 picks a free port) and serves on a
/// background thread; stop() joins it.
class HttpServer {
 public:
  explicit HttpServer(ForecastService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  int start(const std::string& host, int port);
  /// Blocks until stop() is called from another thread or a signal handler.
  void listen(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace peloton
