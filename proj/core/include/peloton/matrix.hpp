#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace peloton {

/// Dense row-major feature matrix, the model-facing form of a dataset.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {values_.data() + i * cols_, cols_}; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }

  const std::vector<double>& values() const noexcept { return values_; }

  /// Rows `indices` in the given order (duplicates allowed).
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

  void append_row(std::span<const double> r);

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

std::vector<double> select(std::span<const double> values, std::span<const std::size_t> indices);

/// FNV-1a over the bit patterns of the matrix and targets, rendered as 16 hex digits.
std::string fingerprint(const FeatureMatrix& x, std::span<const double> y);
/// FNV-1a over raw bytes, same rendering.
std::string fingerprint(std::string_view bytes);

}  // namespace peloton
