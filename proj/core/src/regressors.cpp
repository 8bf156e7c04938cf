#include "peloton/regressors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

#include "peloton/errors.hpp"
#include "peloton/random.hpp"

namespace peloton {

RegressorSpec RegressorSpec::random_forest(std::uint64_t seed, int trees) {
  RegressorSpec s;
  s.kind = Kind::random_forest;
  s.seed = seed;
  s.tree_count = trees;
  return s;
}

RegressorSpec RegressorSpec::quantile_forest(std::uint64_t seed, int trees) {
  RegressorSpec s = random_forest(seed, trees);
  s.kind = Kind::quantile_forest;
  return s;
}

RegressorSpec RegressorSpec::knn(int k) {
  RegressorSpec s;
  s.kind = Kind::knn;
  s.k = k;
  return s;
}

void RegressorSpec::validate() const {
  if (kind == Kind::knn) {
    if (k < 1) throw ConfigError("knn needs k >= 1");
    return;
  }
  if (tree_count < 1) throw ConfigError("forest needs tree_count >= 1");
  if (min_leaf_size < 1) throw ConfigError("min_leaf_size must be >= 1");
  if (max_depth && *max_depth < 0) throw ConfigError("max_depth must be >= 0");
  if (features_per_split && *features_per_split < 1) throw ConfigError("features_per_split must be >= 1");
}

std::string_view to_string(RegressorSpec::Kind kind) {
  switch (kind) {
    case RegressorSpec::Kind::random_forest: return "random_forest";
    case RegressorSpec::Kind::quantile_forest: return "quantile_forest";
    case RegressorSpec::Kind::knn: return "knn";
  }
  return "unknown";
}

RegressorSpec::Kind parse_regressor_kind(std::string_view s) {
  for (auto k : {RegressorSpec::Kind::random_forest, RegressorSpec::Kind::quantile_forest, RegressorSpec::Kind::knn})
    if (to_string(k) == s) return k;
  throw InvalidArgument("unknown regressor kind '" + std::string(s) + "'");
}

double interpolated_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile level must lie in [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

// ---------------------------------------------------------------------------------------------
// DecisionTree

DecisionTree::DecisionTree(std::vector<Node> nodes, std::vector<double> leaf_pool)
    : nodes_(std::move(nodes)), leaf_pool_(std::move(leaf_pool)) {
  if (nodes_.empty()) throw InvalidArgument("tree needs at least one node");
  const int n = static_cast<int>(nodes_.size());
  for (int i = 0; i < n; ++i) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    if (node.feature >= 0) {
      if (node.left <= i || node.left >= n || node.right <= i || node.right >= n)
        throw InvalidArgument("tree node has invalid children");
    } else if (node.pool_begin > node.pool_end || node.pool_end > leaf_pool_.size()) {
      throw InvalidArgument("tree leaf has an invalid target range");
    }
  }
}

const DecisionTree::Node& DecisionTree::leaf(std::span<const double> x) const {
  const Node* node = &nodes_.front();
  while (node->feature >= 0) {
    const auto idx = x[static_cast<std::size_t>(node->feature)] <= node->threshold ? node->left : node->right;
    node = &nodes_[static_cast<std::size_t>(idx)];
  }
  return *node;
}

std::span<const double> DecisionTree::leaf_targets(std::span<const double> x) const {
  const Node& l = leaf(x);
  return {leaf_pool_.data() + l.pool_begin, l.pool_end - l.pool_begin};
}

int DecisionTree::depth() const {
  std::vector<int> d(nodes_.size(), 0);
  int best = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes_[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes_[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes_[i].right)] = d[i] + 1;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------------------------
// Tree construction

namespace {

/// Grows one tree from presorted per-feature index lists. All feature lists hold the same
/// multiset of row indices and are partitioned in lock step, so a node is a [begin, end) range
/// valid in every list.
class TreeGrower {
 public:
  TreeGrower(const FeatureMatrix& x, std::span<const double> y, const RegressorSpec& spec, bool keep_pool)
      : x_(x), y_(y), spec_(spec), keep_pool_(keep_pool), p_(x.cols()) {
    const std::size_t m = spec.features_per_split
                              ? static_cast<std::size_t>(*spec.features_per_split)
                              : (p_ + 2) / 3;
    mtry_ = std::clamp<std::size_t>(m, 1, p_);
    goes_left_.assign(x.rows(), 0);
    features_.resize(p_);
    n_ = x.rows();
    cols_.resize(n_ * p_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t f = 0; f < p_; ++f) cols_[f * n_ + i] = x(i, f);
    sorted_.resize(p_);
  }

  /// `order[f]` lists all training rows sorted by feature f (ties by row index); `counts[i]`
  /// is the multiplicity of row i in this tree's sample.
  DecisionTree grow(const std::vector<std::vector<std::uint32_t>>& order, std::span<const std::uint32_t> counts,
                    std::uint64_t tree_seed) {
    for (std::size_t f = 0; f < p_; ++f) {
      auto& dst = sorted_[f];
      dst.clear();
      for (auto i : order[f])
        for (std::uint32_t c = 0; c < counts[i]; ++c) dst.push_back(i);
    }
    scratch_.resize(sorted_.empty() ? 0 : sorted_[0].size());
    nodes_.clear();
    pool_.clear();
    if (p_ == 0 || sorted_[0].empty()) throw InsufficientData("tree needs at least one sample");
    build(0, sorted_[0].size(), 0, tree_seed);
    return DecisionTree(std::move(nodes_), std::move(pool_));
  }

 private:
  /// `key` identifies the node by its path from the root, so a node's feature draw does not
  /// depend on how many draws other subtrees made.
  int build(std::size_t begin, std::size_t end, int depth, std::uint64_t key) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const std::size_t m = end - begin;
    const auto& rows = sorted_[0];

    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t j = begin; j < end; ++j) {
      const double v = y_[rows[j]];
      sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const auto min_leaf = static_cast<std::size_t>(spec_.min_leaf_size);
    const bool depth_left = !spec_.max_depth || depth < *spec_.max_depth;
    if (depth_left && m >= 2 * min_leaf && lo < hi) {
      if (auto split = best_split(begin, end, sum, key)) {
        partition(begin, end, split->feature, split->threshold);
        const std::size_t mid = begin + split->left_count;
        const int left = build(begin, mid, depth + 1, mix_seed(key ^ 0x1ULL));
        const int right = build(mid, end, depth + 1, mix_seed(key ^ 0x2ULL));
        auto& node = nodes_[static_cast<std::size_t>(id)];
        node.feature = static_cast<int>(split->feature);
        node.threshold = split->threshold;
        node.left = left;
        node.right = right;
        node.value = sum / static_cast<double>(m);
        return id;
      }
    }
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.value = sum / static_cast<double>(m);
    if (keep_pool_) {
      node.pool_begin = static_cast<std::uint32_t>(pool_.size());
      for (std::size_t j = begin; j < end; ++j) pool_.push_back(y_[rows[j]]);
      std::sort(pool_.begin() + node.pool_begin, pool_.end());
      node.pool_end = static_cast<std::uint32_t>(pool_.size());
    }
    return id;
  }

  struct Split {
    std::size_t feature;
    double threshold;
    std::size_t left_count;
  };

  std::optional<Split> best_split(std::size_t begin, std::size_t end, double sum, std::uint64_t key) {
    std::iota(features_.begin(), features_.end(), std::size_t{0});
    for (std::size_t i = 0; i < mtry_; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(mix_seed(key + i) % (p_ - i));
      std::swap(features_[i], features_[j]);
    }
    std::sort(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));

    const std::size_t m = end - begin;
    const auto min_leaf = static_cast<std::size_t>(spec_.min_leaf_size);
    const double parent = sum * sum / static_cast<double>(m);
    double best_score = parent + 1e-12 * std::abs(parent);
    std::optional<Split> best;

    for (std::size_t k = 0; k < mtry_; ++k) {
      const std::size_t f = features_[k];
      const auto& rows = sorted_[f];
      const double* col = cols_.data() + f * n_;
      double left_sum = 0.0;
      const std::size_t first = begin + min_leaf - 1;
      for (std::size_t j = begin; j < first; ++j) left_sum += y_[rows[j]];
      for (std::size_t j = first; j + min_leaf < end; ++j) {
        left_sum += y_[rows[j]];
        const std::size_t n_left = j + 1 - begin;
        const double a = col[rows[j]];
        const double b = col[rows[j + 1]];
        if (!(a < b)) continue;
        const double right_sum = sum - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(n_left) +
                             right_sum * right_sum / static_cast<double>(m - n_left);
        if (score > best_score) {
          best_score = score;
          double t = a + (b - a) / 2.0;
          if (!(t < b)) t = a;
          best = Split{f, t, n_left};
        }
      }
    }
    return best;
  }

  void partition(std::size_t begin, std::size_t end, std::size_t feature, double threshold) {
    const auto& key = sorted_[feature];
    const double* col = cols_.data() + feature * n_;
    for (std::size_t j = begin; j < end; ++j) goes_left_[key[j]] = col[key[j]] <= threshold ? 1 : 0;
    for (std::size_t f = 0; f < p_; ++f) {
      auto& rows = sorted_[f];
      std::size_t l = begin;
      std::size_t r = 0;
      for (std::size_t j = begin; j < end; ++j) {
        const std::uint32_t v = rows[j];
        const std::size_t left = goes_left_[v];
        rows[l] = v;
        scratch_[r] = v;
        l += left;
        r += 1 - left;
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(r),
                rows.begin() + static_cast<std::ptrdiff_t>(l));
    }
  }

  const FeatureMatrix& x_;
  std::span<const double> y_;
  const RegressorSpec& spec_;
  bool keep_pool_;
  std::size_t p_;
  std::size_t mtry_ = 1;
  std::size_t n_ = 0;
  std::vector<double> cols_;  // column-major copy of x
  std::vector<std::vector<std::uint32_t>> sorted_;
  std::vector<std::uint32_t> scratch_;
  std::vector<char> goes_left_;
  std::vector<std::size_t> features_;
  std::vector<DecisionTree::Node> nodes_;
  std::vector<double> pool_;
};

/// Identity of a training row that survives reordering and removal of other rows: a hash of its
/// values plus its ordinal among identical rows.
std::vector<std::uint64_t> row_keys(const FeatureMatrix& x, std::span<const double> y) {
  std::vector<std::uint64_t> keys(x.rows());
  std::unordered_map<std::uint64_t, std::uint64_t> seen;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    std::uint64_t h = mix_seed(std::bit_cast<std::uint64_t>(y[i]));
    for (double v : x.row(i)) h = mix_seed(h ^ std::bit_cast<std::uint64_t>(v));
    keys[i] = mix_seed(h + seen[h]++);
  }
  return keys;
}

/// Poisson(1) multiplicity by inversion; the per-row form of sampling n rows with replacement.
std::uint32_t poisson_one(std::uint64_t seed) {
  const double u = static_cast<double>(mix_seed(seed) >> 11) * 0x1.0p-53;
  double p = std::exp(-1.0);
  double cdf = p;
  std::uint32_t k = 0;
  while (u > cdf && k < 32) {
    ++k;
    p /= static_cast<double>(k);
    cdf += p;
  }
  return k;
}

std::vector<std::vector<std::uint32_t>> presort(const FeatureMatrix& x) {
  std::vector<std::vector<std::uint32_t>> order(x.cols());
  for (std::size_t f = 0; f < x.cols(); ++f) {
    std::vector<std::pair<double, std::uint32_t>> keyed(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) keyed[i] = {x(i, f), static_cast<std::uint32_t>(i)};
    std::sort(keyed.begin(), keyed.end());
    auto& o = order[f];
    o.resize(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) o[i] = keyed[i].second;
  }
  return order;
}

void check_training_data(const FeatureMatrix& x, std::span<const double> y) {
  if (x.rows() == 0) throw InsufficientData("cannot fit on an empty dataset");
  if (x.rows() != y.size()) throw InvalidArgument("feature rows and targets differ in length");
  if (x.cols() == 0) throw InvalidArgument("feature matrix has no columns");
  for (double v : x.values())
    if (!std::isfinite(v)) throw InvalidArgument("non-finite feature value");
  for (double v : y)
    if (!std::isfinite(v)) throw InvalidArgument("non-finite target value");
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Forest

Forest::Forest(std::vector<DecisionTree> trees, std::size_t n_features)
    : trees_(std::move(trees)), n_features_(n_features) {
  if (trees_.empty()) throw InvalidArgument("forest needs at least one tree");
}

Forest Forest::fit(const RegressorSpec& spec, const FeatureMatrix& x, std::span<const double> y) {
  spec.validate();
  check_training_data(x, y);
  if (x.rows() < static_cast<std::size_t>(spec.min_leaf_size))
    throw InsufficientData("dataset smaller than min_leaf_size");

  const auto order = presort(x);
  const std::size_t n = x.rows();
  const bool keep_pool = spec.kind == RegressorSpec::Kind::quantile_forest;
  TreeGrower grower(x, y, spec, keep_pool);

  std::vector<DecisionTree> trees;
  trees.reserve(static_cast<std::size_t>(spec.tree_count));
  std::vector<double> oob_sum(n, 0.0);
  std::vector<std::uint32_t> oob_count(n, 0);
  std::vector<std::uint32_t> counts(n);

  const auto keys = spec.bootstrap ? row_keys(x, y) : std::vector<std::uint64_t>{};
  for (int t = 0; t < spec.tree_count; ++t) {
    const std::uint64_t tree_seed = derive_seed(spec.seed, static_cast<std::uint64_t>(t));
    std::fill(counts.begin(), counts.end(), 1U);
    if (spec.bootstrap) {
      std::uint64_t total = 0;
      for (std::size_t i = 0; i < n; ++i) total += counts[i] = poisson_one(derive_seed(tree_seed, keys[i]));
      if (total == 0) std::fill(counts.begin(), counts.end(), 1U);
    }
    trees.push_back(grower.grow(order, counts, mix_seed(tree_seed)));
    if (spec.bootstrap) {
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[i] != 0) continue;
        oob_sum[i] += trees.back().predict(x.row(i));
        ++oob_count[i];
      }
    }
  }

  Forest forest(std::move(trees), x.cols());
  if (spec.bootstrap) {
    forest.out_of_bag_.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      forest.out_of_bag_[i] = oob_count[i] ? oob_sum[i] / oob_count[i] : std::numeric_limits<double>::quiet_NaN();
  }
  return forest;
}

double Forest::predict(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& t : trees_) sum += t.predict(x);
  return sum / static_cast<double>(trees_.size());
}

std::vector<double> Forest::pooled_targets(std::span<const double> x) const {
  std::vector<double> pool;
  for (const auto& t : trees_) {
    const auto leaf = t.leaf_targets(x);
    pool.insert(pool.end(), leaf.begin(), leaf.end());
  }
  if (pool.empty()) throw ModelError("forest keeps no leaf targets; fit it as a quantile_forest");
  std::sort(pool.begin(), pool.end());
  return pool;
}

double Forest::predict_quantile(std::span<const double> x, double q) const {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");
  return interpolated_quantile(pooled_targets(x), q);
}

// ---------------------------------------------------------------------------------------------
// KnnModel

KnnModel::KnnModel(int k, std::vector<double> means, std::vector<double> scales, FeatureMatrix standardized,
                   std::vector<double> targets)
    : k_(k),
      means_(std::move(means)),
      scales_(std::move(scales)),
      standardized_(std::move(standardized)),
      targets_(std::move(targets)) {
  if (k_ < 1) throw ConfigError("knn needs k >= 1");
  if (standardized_.rows() < static_cast<std::size_t>(k_))
    throw ConfigError("knn fitted on " + std::to_string(standardized_.rows()) + " points, fewer than k = " +
                      std::to_string(k_));
  if (means_.size() != standardized_.cols() || scales_.size() != standardized_.cols() ||
      targets_.size() != standardized_.rows())
    throw InvalidArgument("inconsistent knn state");
}

KnnModel KnnModel::fit(int k, const FeatureMatrix& x, std::span<const double> y) {
  check_training_data(x, y);
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  std::vector<double> means(p, 0.0);
  std::vector<double> scales(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x(i, j);
    means[j] = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (x(i, j) - means[j]) * (x(i, j) - means[j]);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    scales[j] = sd > 0.0 ? sd : 1.0;
  }
  FeatureMatrix z(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) z(i, j) = (x(i, j) - means[j]) / scales[j];
  return KnnModel(k, std::move(means), std::move(scales), std::move(z), {y.begin(), y.end()});
}

std::vector<std::size_t> KnnModel::neighbours(std::span<const double> x) const {
  const std::size_t n = standardized_.rows();
  const std::size_t p = n_features();
  std::vector<double> zx(p);
  for (std::size_t j = 0; j < p; ++j) zx[j] = (x[j] - means_[j]) / scales_[j];
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = standardized_.row(i);
    double d = 0.0;
    for (std::size_t j = 0; j < p; ++j) d += (r[j] - zx[j]) * (r[j] - zx[j]);
    dist[i] = {d, i};
  }
  const auto k = static_cast<std::size_t>(k_);
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = dist[i].second;
  return out;
}

double KnnModel::predict(std::span<const double> x) const {
  double s = 0.0;
  for (auto i : neighbours(x)) s += targets_[i];
  return s / static_cast<double>(k_);
}

std::vector<double> KnnModel::pooled_targets(std::span<const double> x) const {
  std::vector<double> pool;
  for (auto i : neighbours(x)) pool.push_back(targets_[i]);
  std::sort(pool.begin(), pool.end());
  return pool;
}

double KnnModel::predict_quantile(std::span<const double> x, double q) const {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");
  return interpolated_quantile(pooled_targets(x), q);
}

// ---------------------------------------------------------------------------------------------
// Regressor

Regressor::Regressor(RegressorSpec spec, std::string fingerprint, Model model)
    : spec_(std::move(spec)), fingerprint_(std::move(fingerprint)), model_(std::move(model)) {}

Regressor Regressor::fit(const RegressorSpec& spec, const FeatureMatrix& x, std::span<const double> y) {
  spec.validate();
  if (spec.kind == RegressorSpec::Kind::knn) {
    if (x.rows() < static_cast<std::size_t>(spec.k))
      throw ConfigError("knn fitted on " + std::to_string(x.rows()) + " points, fewer than k = " +
                        std::to_string(spec.k));
    return Regressor(spec, peloton::fingerprint(x, y), KnnModel::fit(spec.k, x, y));
  }
  return Regressor(spec, peloton::fingerprint(x, y), Forest::fit(spec, x, y));
}

std::size_t Regressor::n_features() const noexcept {
  return std::visit([](const auto& m) { return m.n_features(); }, model_);
}

void Regressor::check_width(std::span<const double> x) const {
  if (x.size() != n_features())
    throw ModelError("feature vector has " + std::to_string(x.size()) + " columns, model expects " +
                     std::to_string(n_features()));
}

double Regressor::predict(std::span<const double> x) const {
  check_width(x);
  return std::visit([&](const auto& m) { return m.predict(x); }, model_);
}

double Regressor::predict_quantile(std::span<const double> x, double q) const {
  if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");
  check_width(x);
  return std::visit([&](const auto& m) { return m.predict_quantile(x, q); }, model_);
}

std::vector<double> Regressor::predict_quantiles(std::span<const double> x, std::span<const double> qs) const {
  for (double q : qs)
    if (!(q > 0.0 && q < 1.0)) throw InvalidArgument("quantile level must lie in (0, 1)");
  check_width(x);
  const auto pool = std::visit([&](const auto& m) { return m.pooled_targets(x); }, model_);
  std::vector<double> out;
  out.reserve(qs.size());
  for (double q : qs) out.push_back(interpolated_quantile(pool, q));
  return out;
}

double Regressor::predict_difficulty(std::span<const double> x) const {
  check_width(x);
  const auto* knn = std::get_if<KnnModel>(&model_);
  if (!knn) throw ModelError("difficulty estimates need a knn model");
  return std::max(0.0, knn->predict(x));
}

std::vector<double> Regressor::honest_training_predictions(const FeatureMatrix& x) const {
  std::vector<double> out(x.rows());
  const auto* forest = std::get_if<Forest>(&model_);
  const bool have_oob = forest && forest->out_of_bag().size() == x.rows();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (have_oob && !std::isnan(forest->out_of_bag()[i]))
      out[i] = forest->out_of_bag()[i];
    else
      out[i] = predict(x.row(i));
  }
  return out;
}

}  // namespace peloton
