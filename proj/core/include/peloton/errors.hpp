#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace peloton {

/// Precondition violated by a caller-supplied value.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for everything that goes wrong while reading or validating data.
class DataError : public std::runtime_error {
 public:
  enum class Kind { missing_file, malformed_csv, schema_mismatch, empty_dataset, validation };

  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// A row/field level schema or bound violation. Row numbers are 1-based data rows
/// (the header is row 0); row 0 is used for records that did not come from a file.
class ValidationError : public DataError {
 public:
  ValidationError(std::size_t row, std::string field, const std::string& detail)
      : DataError(Kind::validation, format(row, field, detail)), row_(row), field_(std::move(field)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(std::size_t row, const std::string& field, const std::string& detail) {
    std::string msg = "field '" + field + "'";
    if (row > 0) msg = "row " + std::to_string(row) + ": " + msg;
    return msg + ": " + detail;
  }

  std::size_t row_;
  std::string field_;
};

/// Model configuration that cannot be honoured (k larger than the training set, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset too small for the requested procedure.
class InsufficientData : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with fitted models or persisted artifacts (dimension mismatch, stale fingerprint,
/// unreadable artifact).
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric whose value is mathematically undefined for the input (e.g. R² with zero variance).
class UndefinedMetric : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace peloton
