#pragma once

// Learners wrapped by the conformal layer: a random forest for point predictions, the same
// forest keeping its leaf targets for quantiles, and a kNN regressor used as the difficulty
// estimator.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "peloton/matrix.hpp"

namespace peloton {

struct RegressorSpec {
  enum class Kind { random_forest, quantile_forest, knn };

  Kind kind = Kind::random_forest;
  int tree_count = 100;
  std::optional<int> max_depth;  // unbounded when empty
  int min_leaf_size = 5;
  bool bootstrap = true;
  std::optional<int> features_per_split;  // ceil(p / 3) when empty
  int k = 10;
  std::uint64_t seed = 0;

  static RegressorSpec random_forest(std::uint64_t seed = 0, int trees = 100);
  static RegressorSpec quantile_forest(std::uint64_t seed = 0, int trees = 100);
  static RegressorSpec knn(int k = 10);

  /// Throws ConfigError on out-of-range settings.
  void validate() const;

  friend bool operator==(const RegressorSpec&, const RegressorSpec&) = default;
};

std::string_view to_string(RegressorSpec::Kind kind);
RegressorSpec::Kind parse_regressor_kind(std::string_view s);

/// Binary regression tree stored as a flat node array; node 0 is the root.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // go left when x[feature] <= threshold
    int left = -1;
    int right = -1;
    double value = 0.0;  // mean target of the leaf
    std::uint32_t pool_begin = 0;  // leaf targets in [pool_begin, pool_end) of the pool
    std::uint32_t pool_end = 0;

    friend bool operator==(const Node&, const Node&) = default;
  };

  DecisionTree() = default;
  /// Throws InvalidArgument when child indices or pool ranges are inconsistent.
  DecisionTree(std::vector<Node> nodes, std::vector<double> leaf_pool);

  const Node& leaf(std::span<const double> x) const;
  double predict(std::span<const double> x) const { return leaf(x).value; }
  /// Sorted training targets that landed in x's leaf (empty unless the tree keeps pools).
  std::span<const double> leaf_targets(std::span<const double> x) const;

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::vector<double>& leaf_pool() const noexcept { return leaf_pool_; }
  int depth() const;

  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;

 private:
  std::vector<Node> nodes_;
  std::vector<double> leaf_pool_;
};

class Forest {
 public:
  Forest() = default;
  Forest(std::vector<DecisionTree> trees, std::size_t n_features);

  /// Bagged variance-reduction trees. Ties between candidate splits go to the lowest feature
  /// index, then the lowest threshold. Each tree draws from its own seed derived from spec.seed.
  static Forest fit(const RegressorSpec& spec, const FeatureMatrix& x, std::span<const double> y);

  double predict(std::span<const double> x) const;
  /// Linear-interpolation quantile of the targets pooled from x's leaves across all trees.
  double predict_quantile(std::span<const double> x, double q) const;
  /// Sorted targets pooled from x's leaves across all trees.
  std::vector<double> pooled_targets(std::span<const double> x) const;

  /// Mean prediction of the trees for which training row i was out of bag; NaN when row i was
  /// in every bootstrap sample. Empty for forests that were loaded rather than fitted.
  const std::vector<double>& out_of_bag() const noexcept { return out_of_bag_; }

  const std::vector<DecisionTree>& trees() const noexcept { return trees_; }
  std::size_t n_features() const noexcept { return n_features_; }

 private:
  std::vector<DecisionTree> trees_;
  std::size_t n_features_ = 0;
  std::vector<double> out_of_bag_;
};

/// k nearest neighbours under Euclidean distance on z-scored features. Distance ties go to the
/// lower training index.
class KnnModel {
 public:
  KnnModel() = default;
  KnnModel(int k, std::vector<double> means, std::vector<double> scales, FeatureMatrix standardized,
           std::vector<double> targets);

  static KnnModel fit(int k, const FeatureMatrix& x, std::span<const double> y);

  /// Training indices of the k nearest neighbours, nearest first.
  std::vector<std::size_t> neighbours(std::span<const double> x) const;
  double predict(std::span<const double> x) const;
  double predict_quantile(std::span<const double> x, double q) const;
  /// Sorted targets of the k nearest neighbours.
  std::vector<double> pooled_targets(std::span<const double> x) const;

  int k() const noexcept { return k_; }
  const std::vector<double>& means() const noexcept { return means_; }
  const std::vector<double>& scales() const noexcept { return scales_; }
  const FeatureMatrix& standardized() const noexcept { return standardized_; }
  const std::vector<double>& targets() const noexcept { return targets_; }
  std::size_t n_features() const noexcept { return means_.size(); }

 private:
  int k_ = 0;
  std::vector<double> means_;
  std::vector<double> scales_;
  FeatureMatrix standardized_;
  std::vector<double> targets_;
};

/// Fitted learner behind one contract. Immutable after fit; safe to share across threads.
class Regressor {
 public:
  using Model = std::variant<Forest, KnnModel>;

  Regressor(RegressorSpec spec, std::string fingerprint, Model model);

  static Regressor fit(const RegressorSpec& spec, const FeatureMatrix& x, std::span<const double> y);

  double predict(std::span<const double> x) const;
  /// Forest and kNN models; q must lie in (0, 1).
  double predict_quantile(std::span<const double> x, double q) const;
  /// Several quantile levels from one pass over the leaves / neighbours.
  std::vector<double> predict_quantiles(std::span<const double> x, std::span<const double> qs) const;
  /// kNN models fitted on absolute residuals: mean residual of the k nearest points.
  double predict_difficulty(std::span<const double> x) const;

  /// Residual-free predictions for the training rows where the learner has them (forest
  /// out-of-bag rows); in-sample predictions otherwise.
  std::vector<double> honest_training_predictions(const FeatureMatrix& x) const;

  const RegressorSpec& spec() const noexcept { return spec_; }
  const std::string& fingerprint() const noexcept { return fingerprint_; }
  std::size_t n_features() const noexcept;
  const Model& model() const noexcept { return model_; }

  std::string serialize() const;
  static Regressor deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Regressor load(const std::filesystem::path& path);

 private:
  void check_width(std::span<const double> x) const;

  RegressorSpec spec_;
  std::string fingerprint_;
  Model model_;
};

/// Linear-interpolation quantile (order statistic h = (n - 1) q) of sorted values.
double interpolated_quantile(std::span<const double> sorted, double q);

}  // namespace peloton
