// JSON artifacts for fitted regressors and calibrated conformal models. Doubles are written in
// shortest round-trip form, so a loaded model predicts bit-identically to the one saved.

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "peloton/conformal.hpp"
#include "peloton/errors.hpp"
#include "peloton/regressors.hpp"

namespace peloton {

using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

json spec_to_json(const RegressorSpec& s) {
  json j{{"kind", to_string(s.kind)},
         {"tree_count", s.tree_count},
         {"min_leaf_size", s.min_leaf_size},
         {"bootstrap", s.bootstrap},
         {"k", s.k},
         {"seed", s.seed}};
  j["max_depth"] = s.max_depth ? json(*s.max_depth) : json(nullptr);
  j["features_per_split"] = s.features_per_split ? json(*s.features_per_split) : json(nullptr);
  return j;
}

RegressorSpec spec_from_json(const json& j) {
  RegressorSpec s;
  s.kind = parse_regressor_kind(j.at("kind").get<std::string>());
  s.tree_count = j.at("tree_count").get<int>();
  s.min_leaf_size = j.at("min_leaf_size").get<int>();
  s.bootstrap = j.at("bootstrap").get<bool>();
  s.k = j.at("k").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("max_depth").is_null()) s.max_depth = j.at("max_depth").get<int>();
  if (!j.at("features_per_split").is_null()) s.features_per_split = j.at("features_per_split").get<int>();
  return s;
}

json matrix_to_json(const FeatureMatrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"values", m.values()}};
}

FeatureMatrix matrix_from_json(const json& j) {
  return FeatureMatrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                       j.at("values").get<std::vector<double>>());
}

json tree_to_json(const DecisionTree& t) {
  // Column layout keeps artifacts compact: one array per node field.
  json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
       value = json::array(), pool_begin = json::array(), pool_end = json::array();
  for (const auto& n : t.nodes()) {
    feature.push_back(n.feature);
    threshold.push_back(n.threshold);
    left.push_back(n.left);
    right.push_back(n.right);
    value.push_back(n.value);
    pool_begin.push_back(n.pool_begin);
    pool_end.push_back(n.pool_end);
  }
  return {{"feature", feature}, {"threshold", threshold}, {"left", left},         {"right", right},
          {"value", value},     {"pool_begin", pool_begin}, {"pool_end", pool_end}, {"pool", t.leaf_pool()}};
}

DecisionTree tree_from_json(const json& j) {
  const auto feature = j.at("feature").get<std::vector<int>>();
  const auto threshold = j.at("threshold").get<std::vector<double>>();
  const auto left = j.at("left").get<std::vector<int>>();
  const auto right = j.at("right").get<std::vector<int>>();
  const auto value = j.at("value").get<std::vector<double>>();
  const auto pool_begin = j.at("pool_begin").get<std::vector<std::uint32_t>>();
  const auto pool_end = j.at("pool_end").get<std::vector<std::uint32_t>>();
  const std::size_t n = feature.size();
  if (threshold.size() != n || left.size() != n || right.size() != n || value.size() != n ||
      pool_begin.size() != n || pool_end.size() != n)
    throw ModelError("tree node arrays differ in length");
  std::vector<DecisionTree::Node> nodes(n);
  for (std::size_t i = 0; i < n; ++i)
    nodes[i] = {feature[i], threshold[i], left[i], right[i], value[i], pool_begin[i], pool_end[i]};
  return DecisionTree(std::move(nodes), j.at("pool").get<std::vector<double>>());
}

json regressor_to_json(const Regressor& r) {
  json j{{"spec", spec_to_json(r.spec())}, {"fingerprint", r.fingerprint()}};
  if (const auto* f = std::get_if<Forest>(&r.model())) {
    json trees = json::array();
    for (const auto& t : f->trees()) trees.push_back(tree_to_json(t));
    j["forest"] = {{"n_features", f->n_features()}, {"trees", std::move(trees)}};
  } else {
    const auto& k = std::get<KnnModel>(r.model());
    j["knn"] = {{"k", k.k()},
                {"means", k.means()},
                {"scales", k.scales()},
                {"standardized", matrix_to_json(k.standardized())},
                {"targets", k.targets()}};
  }
  return j;
}

Regressor regressor_from_json(const json& j) {
  RegressorSpec spec = spec_from_json(j.at("spec"));
  std::string fp = j.at("fingerprint").get<std::string>();
  if (j.contains("forest")) {
    const auto& f = j.at("forest");
    std::vector<DecisionTree> trees;
    for (const auto& t : f.at("trees")) trees.push_back(tree_from_json(t));
    return Regressor(std::move(spec), std::move(fp), Forest(std::move(trees), f.at("n_features").get<std::size_t>()));
  }
  const auto& k = j.at("knn");
  return Regressor(std::move(spec), std::move(fp),
                   KnnModel(k.at("k").get<int>(), k.at("means").get<std::vector<double>>(),
                            k.at("scales").get<std::vector<double>>(), matrix_from_json(k.at("standardized")),
                            k.at("targets").get<std::vector<double>>()));
}

json config_to_json(const MethodConfig& c) {
  json j{{"method", to_string(c.method)},
         {"folds", c.folds},
         {"bootstrap_count", c.bootstrap_count},
         {"calibration_fraction", c.calibration_fraction},
         {"cqr_band", c.cqr_band},
         {"base_spec", spec_to_json(c.base_spec)},
         {"difficulty_spec", spec_to_json(c.difficulty_spec)},
         {"seed", c.seed}};
  j["beta"] = c.beta ? json(*c.beta) : json(nullptr);
  return j;
}

MethodConfig config_from_json(const json& j) {
  MethodConfig c;
  c.method = parse_method(j.at("method").get<std::string>());
  c.folds = j.at("folds").get<int>();
  c.bootstrap_count = j.at("bootstrap_count").get<int>();
  c.calibration_fraction = j.at("calibration_fraction").get<double>();
  c.cqr_band = j.at("cqr_band").get<double>();
  c.base_spec = spec_from_json(j.at("base_spec"));
  c.difficulty_spec = spec_from_json(j.at("difficulty_spec"));
  c.seed = j.at("seed").get<std::uint64_t>();
  if (!j.at("beta").is_null()) c.beta = j.at("beta").get<double>();
  return c;
}

json state_to_json(const ConformalModel::State& state) {
  if (const auto* r = std::get_if<ResamplingState>(&state)) {
    json models = json::array();
    for (const auto& m : r->models) models.push_back(regressor_to_json(m));
    return {{"type", "resampling"},
            {"models", std::move(models)},
            {"held_out_by", r->held_out_by},
            {"residuals", r->residuals},
            {"fold_of", r->fold_of},
            {"bootstrap_samples", r->bootstrap_samples}};
  }
  if (const auto* i = std::get_if<IcpState>(&state)) {
    return {{"type", "icp"},
            {"base", regressor_to_json(i->base)},
            {"difficulty", regressor_to_json(i->difficulty)},
            {"calibration_rows", i->calibration_rows},
            {"scores", i->scores},
            {"beta", i->beta}};
  }
  const auto& c = std::get<CqrState>(state);
  return {{"type", "cqr"},
          {"quantile_model", regressor_to_json(c.quantile_model)},
          {"calibration_rows", c.calibration_rows},
          {"scores", c.scores}};
}

ConformalModel::State state_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "resampling") {
    ResamplingState r;
    for (const auto& m : j.at("models")) r.models.push_back(regressor_from_json(m));
    r.held_out_by = j.at("held_out_by").get<std::vector<std::vector<std::uint32_t>>>();
    r.residuals = j.at("residuals").get<std::vector<double>>();
    r.fold_of = j.at("fold_of").get<std::vector<std::uint32_t>>();
    r.bootstrap_samples = j.at("bootstrap_samples").get<std::vector<std::vector<std::uint32_t>>>();
    return r;
  }
  if (type == "icp") {
    return IcpState{regressor_from_json(j.at("base")), regressor_from_json(j.at("difficulty")),
                    j.at("calibration_rows").get<std::vector<std::size_t>>(),
                    j.at("scores").get<std::vector<double>>(), j.at("beta").get<double>()};
  }
  if (type == "cqr") {
    return CqrState{regressor_from_json(j.at("quantile_model")),
                    j.at("calibration_rows").get<std::vector<std::size_t>>(),
                    j.at("scores").get<std::vector<double>>()};
  }
  throw ModelError("unknown calibration state type '" + type + "'");
}

json parse_artifact(std::string_view text, std::string_view format) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("unreadable artifact: ") + e.what());
  }
  if (!j.is_object() || j.value("format", "") != format)
    throw ModelError("artifact is not a " + std::string(format));
  if (j.value("version", 0) != kFormatVersion)
    throw ModelError("unsupported artifact version " + j.value("version", json(nullptr)).dump());
  return j;
}

template <typename F>
auto guarded(F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ModelError(std::string("malformed artifact: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ModelError(std::string("inconsistent artifact: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open artifact " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ModelError("cannot write artifact " + path.string());
  out << text << '\n';
  if (!out) throw ModelError("failed writing artifact " + path.string());
}

}  // namespace

std::string Regressor::serialize() const {
  json j = regressor_to_json(*this);
  j["format"] = "peloton.regressor";
  j["version"] = kFormatVersion;
  return j.dump();
}

Regressor Regressor::deserialize(std::string_view text) {
  const json j = parse_artifact(text, "peloton.regressor");
  return guarded([&] { return regressor_from_json(j); });
}

void Regressor::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

Regressor Regressor::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string ConformalModel::serialize() const {
  json j{{"format", "peloton.conformal"},
         {"version", kFormatVersion},
         {"config", config_to_json(config_)},
         {"fingerprint", fingerprint_},
         {"n_features", n_features_},
         {"state", state_to_json(shared_->state)}};
  return j.dump();
}

ConformalModel ConformalModel::deserialize(std::string_view text) {
  const json j = parse_artifact(text, "peloton.conformal");
  return guarded([&] {
    return ConformalModel(config_from_json(j.at("config")), j.at("fingerprint").get<std::string>(),
                          j.at("n_features").get<std::size_t>(), state_from_json(j.at("state")));
  });
}

void ConformalModel::save(const std::filesystem::path& path) const { write_file(path, serialize()); }

ConformalModel ConformalModel::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace peloton
