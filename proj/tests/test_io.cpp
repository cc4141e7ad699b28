#include <gtest/gtest.h>

#include <filesystem>

#include "optdist/io.hpp"

using namespace optdist;

namespace {

PreparedDataset toy_dataset() {
  const auto d = generate_synthetic(SyntheticConfig::four_clusters(600, 3));
  return prepare_dataset(d.schema, d.examples, 3, 3);
}

TrainConfig toy_config(ModelKind kind) {
  TrainConfig c;
  c.kind = kind;
  c.embedding_dim = 3;
  c.bottom_layers = {8};
  c.tower_layers = {8};
  c.selector_layers = {4};
  c.batch_size = 64;
  c.max_epochs = 2;
  c.seed = 5;
  return c;
}

}  // namespace

TEST(TrainConfigJson, RoundTripAndOverlay) {
  TrainConfig c = toy_config(ModelKind::two_stage);
  c.ablation.no_kl = true;
  c.hard_selection = false;
  c.optimizer = OptimizerKind::sgd;
  c.hidden_activation = Activation::softplus;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));

  const TrainConfig overlaid = train_config_from_json(Json{{"temperature", 0.25}}, c);
  EXPECT_EQ(overlaid.temperature, 0.25);
  EXPECT_EQ(overlaid.kind, ModelKind::two_stage);
}

TEST(TrainConfigJson, RejectsUnknownAndMalformed) {
  EXPECT_THROW(train_config_from_json(Json{{"depth", 3}}), Error);
  EXPECT_THROW(train_config_from_json(Json{{"temperature", "hot"}}), Error);
  EXPECT_THROW(train_config_from_json(Json{{"kind", "mdan"}}), Error);
  EXPECT_THROW(train_config_from_json(Json::array()), Error);
}

TEST(SchemaJson, RoundTrip) {
  const auto s = synthetic_schema();
  EXPECT_EQ(schema_from_json(to_json(s)), s);
  EXPECT_THROW(schema_from_json(Json{{"features", Json::array()}, {"label", "y"}}), Error);
  EXPECT_THROW(schema_from_json(Json{{"label", "y"}}), Error);
}

TEST(SyntheticConfigJson, RoundTrip) {
  const auto c = SyntheticConfig::four_clusters(1234, 8);
  const auto back = synthetic_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  Json bad = to_json(c);
  bad["n"] = 0;
  EXPECT_THROW(synthetic_config_from_json(bad), Error);
}

TEST(MetricsJson, NullsForUndefined) {
  MetricsReport r;
  r.mae = 1.5;
  r.n = 3;
  const Json j = to_json(r);
  EXPECT_TRUE(j["norm_gini"].is_null());
  EXPECT_EQ(metrics_from_json(j), r);
}

TEST(Artifact, RoundTripGivesBitIdenticalReport) {
  const auto ds = toy_dataset();
  for (ModelKind kind : {ModelKind::optdist, ModelKind::ziln, ModelKind::two_stage, ModelKind::mtl_mse}) {
    const auto trained = train(toy_config(kind), ds.data.layout, ds.data.train, ds.data.validation);
    const auto path = (std::filesystem::temp_directory_path() / "optdist_artifact_test.json").string();
    save_artifact(path, trained.model, ds.preprocessor);
    const ModelArtifact loaded = load_artifact(path);
    EXPECT_EQ(evaluate(loaded.model, ds.data.test), evaluate(trained.model, ds.data.test)) << to_string(kind);
    EXPECT_EQ(loaded.preprocessor.schema, ds.preprocessor.schema);
    EXPECT_EQ(loaded.model.single_distribution(), kind == ModelKind::ziln);
    std::filesystem::remove(path);
  }
}

TEST(Artifact, VersionMismatchDetected) {
  const auto ds = toy_dataset();
  const Model m = build_model(toy_config(ModelKind::ziln), ds.data.layout);
  Json j = artifact_to_json(m, ds.preprocessor);
  EXPECT_TRUE(j["single_distribution"].get<bool>());
  j["version"] = kArtifactVersion + 1;
  try {
    artifact_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "version_mismatch");
  }
  j = artifact_to_json(m, ds.preprocessor);
  j["parameters"].erase(0);
  EXPECT_THROW(artifact_from_json(j), Error);
}
