#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "peloton/data.hpp"
#include "peloton/service.hpp"

namespace support {

/// Fresh empty directory under the system temp dir.
std::filesystem::path fresh_dir(std::string_view name);

/// Small speed and power artifacts trained on synthetic data, built once per process.
struct Artifacts {
  peloton::TargetArtifact speed;
  peloton::TargetArtifact power;
};
const Artifacts& small_artifacts();
peloton::TrainOptions small_train_options();

/// The stage used by the golden request.
peloton::RawRaceRecord golden_stage();

std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, const std::string& text);

/// Structural equality with numbers compared to a relative tolerance. On mismatch returns the
/// JSON pointer of the first difference.
std::optional<std::string> json_difference(const nlohmann::json& expected, const nlohmann::json& actual,
                                           double rel_tol = 1e-9);

}  // namespace support
