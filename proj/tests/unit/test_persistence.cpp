#include <gtest/gtest.h>

#include <fstream>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "peloton/conformal.hpp"
#include "peloton/errors.hpp"
#include "peloton/service.hpp"

using namespace peloton;

namespace {

struct Problem {
  FeatureMatrix x;
  std::vector<double> y;
  FeatureMatrix test;
};

const Problem& problem() {
  static const Problem p = [] {
    const auto d = generate_synthetic(90, TargetKind::speed, 21);
    const FeatureLayout layout(TargetKind::speed, true);
    const auto t = generate_synthetic(12, TargetKind::speed, 22);
    return Problem{layout.encode(d), d.targets, layout.encode(t)};
  }();
  return p;
}

MethodConfig config_for(Method m) {
  MethodConfig c;
  c.method = m;
  c.base_spec = RegressorSpec::random_forest(0, 6);
  c.folds = 3;
  c.bootstrap_count = 8;
  c.seed = 4;
  return c;
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST(ConformalPersistence, RoundTripEveryMethod) {
  const auto& pr = problem();
  const std::vector<double> alphas{0.05, 0.1, 0.2};
  const auto dir = support::fresh_dir("conformal_roundtrip");
  for (auto m : all_methods()) {
    const auto model = ConformalModel::calibrate(config_for(m), pr.x, pr.y);
    const auto text = model.serialize();
    const auto back = ConformalModel::deserialize(text);
    EXPECT_EQ(back.serialize(), text) << to_string(m);
    EXPECT_EQ(back.method(), m);
    EXPECT_EQ(back.fingerprint(), model.fingerprint());
    model.save(dir / "m.json");
    const auto loaded = ConformalModel::load(dir / "m.json");
    for (std::size_t i = 0; i < pr.test.rows(); ++i) {
      const auto a = model.predict_intervals(pr.test.row(i), alphas);
      EXPECT_EQ(back.predict_intervals(pr.test.row(i), alphas), a) << to_string(m);
      EXPECT_EQ(loaded.predict_intervals(pr.test.row(i), alphas), a) << to_string(m);
    }
  }
}

TEST(ConformalPersistence, CqrBandSurvives) {
  auto c = config_for(Method::cqr);
  c.cqr_band = 0.2;
  const auto back = ConformalModel::deserialize(ConformalModel::calibrate(c, problem().x, problem().y).serialize());
  EXPECT_EQ(back.config().cqr_band, 0.2);
}

TEST(ConformalPersistence, RejectsDamagedText) {
  const auto text = ConformalModel::calibrate(config_for(Method::icp), problem().x, problem().y).serialize();
  EXPECT_THROW(ConformalModel::deserialize("not json"), ModelError);
  EXPECT_THROW(ConformalModel::deserialize(text.substr(0, text.size() / 2)), ModelError);

  auto j = nlohmann::json::parse(text);
  j["format"] = "peloton.regressor";
  EXPECT_THROW(ConformalModel::deserialize(j.dump()), ModelError);

  j = nlohmann::json::parse(text);
  j["version"] = 99;
  EXPECT_THROW(ConformalModel::deserialize(j.dump()), ModelError);

  j = nlohmann::json::parse(text);
  j.erase("config");
  EXPECT_THROW(ConformalModel::deserialize(j.dump()), ModelError);

  EXPECT_THROW(ConformalModel::load(support::fresh_dir("conformal_missing") / "none.json"), ModelError);
  EXPECT_THROW(Regressor::deserialize(text), ModelError);
}

TEST(ArtifactPersistence, RoundTrip) {
  const auto& a = support::small_artifacts();
  const auto dir = support::fresh_dir("artifact_roundtrip");
  save_artifact(a.speed, dir);
  save_artifact(a.power, dir);
  const auto speed = load_artifact(dir, TargetKind::speed);
  const auto power = load_artifact(dir, TargetKind::power);
  EXPECT_EQ(speed.model_version, a.speed.model_version);
  EXPECT_EQ(power.data_fingerprint, a.power.data_fingerprint);
  EXPECT_EQ(power.rows, 400u);
  for (auto m : {Method::icp, Method::cqr, Method::cv_plus}) {
    EXPECT_TRUE(power.has_method(m));
    EXPECT_EQ(power.weather.at(m).serialize(), a.power.weather.at(m).serialize());
    EXPECT_EQ(speed.no_weather.at(m).serialize(), a.speed.no_weather.at(m).serialize());
  }
  EXPECT_FALSE(power.has_method(Method::jackknife_plus));
  EXPECT_EQ(speed.point_weather.serialize(), a.speed.point_weather.serialize());
}

TEST(ArtifactPersistence, Failures) {
  const auto& a = support::small_artifacts();
  const auto dir = support::fresh_dir("artifact_failures");
  EXPECT_THROW(load_artifact(dir, TargetKind::speed), ModelError);

  save_artifact(a.speed, dir);
  std::filesystem::copy(dir / "speed", dir / "power", std::filesystem::copy_options::recursive);
  EXPECT_THROW(load_artifact(dir, TargetKind::power), ModelError);

  std::filesystem::remove(dir / "speed" / "point_weather.json");
  EXPECT_THROW(load_artifact(dir, TargetKind::speed), ModelError);

  save_artifact(a.speed, dir);
  write_text(dir / "speed" / "manifest.json", "{\"format\": \"peloton.artifact\", \"version\": 2}");
  EXPECT_THROW(load_artifact(dir, TargetKind::speed), ModelError);

  // A no-weather point model where the weather one belongs: widths no longer match the layout.
  save_artifact(a.speed, dir);
  std::filesystem::copy_file(dir / "speed" / "point_no_weather.json", dir / "speed" / "point_weather.json",
                             std::filesystem::copy_options::overwrite_existing);
  EXPECT_THROW(load_artifact(dir, TargetKind::speed), ModelError);
}
