#include "peloton/matrix.hpp"

#include <bit>
#include <cstdio>

#include "peloton/errors.hpp"

namespace peloton {

namespace {

class Fnv1a {
 public:
  void add(std::uint64_t word) {
    for (int b = 0; b < 8; ++b) {
      state_ ^= (word >> (8 * b)) & 0xffU;
      state_ *= 0x100000001b3ULL;
    }
  }
  void add(double v) { add(std::bit_cast<std::uint64_t>(v)); }
  void add_bytes(std::string_view bytes) {
    for (unsigned char c : bytes) {
      state_ ^= c;
      state_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t value() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

FeatureMatrix::FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) throw InvalidArgument("matrix storage does not match its shape");
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  FeatureMatrix out(indices.size(), cols_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto src = row(indices[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

void FeatureMatrix::append_row(std::span<const double> r) {
  if (rows_ == 0 && cols_ == 0) cols_ = r.size();
  if (r.size() != cols_) throw InvalidArgument("row width does not match matrix");
  values_.insert(values_.end(), r.begin(), r.end());
  ++rows_;
}

std::vector<double> select(std::span<const double> values, std::span<const std::size_t> indices) {
  std::vector<double> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(values[i]);
  return out;
}

std::string fingerprint(const FeatureMatrix& x, std::span<const double> y) {
  Fnv1a h;
  h.add(static_cast<std::uint64_t>(x.rows()));
  h.add(static_cast<std::uint64_t>(x.cols()));
  for (double v : x.values()) h.add(v);
  h.add(static_cast<std::uint64_t>(y.size()));
  for (double v : y) h.add(v);
  return hex16(h.value());
}

std::string fingerprint(std::string_view bytes) {
  Fnv1a h;
  h.add_bytes(bytes);
  return hex16(h.value());
}

}  // namespace peloton
