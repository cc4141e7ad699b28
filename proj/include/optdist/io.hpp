#pragma once

// JSON encodings for configs, schemas, metrics and training history, plus
// the self-describing model artifact.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "optdist/data.hpp"
#include "optdist/training.hpp"

namespace optdist {

using Json = nlohmann::json;

inline constexpr int kArtifactVersion = 1;
inline constexpr const char* kArtifactFormat = "optdist-model";

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "io_error", "cannot open '" + path + "'");
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error("parse_error", path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "io_error", "cannot write '" + path + "'");
  out << text;
  require(static_cast<bool>(out), "io_error", "failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Schema

inline Json to_json(const FeatureSchema& s) {
  Json features = Json::array();
  for (const auto& f : s.features)
    features.push_back({{"name", f.name}, {"kind", f.kind == FeatureKind::categorical ? "categorical" : "continuous"}});
  return {{"features", features}, {"label", s.label}, {"horizon_days", s.horizon_days}};
}

inline FeatureSchema schema_from_json(const Json& j) {
  try {
    FeatureSchema s;
    for (const auto& f : j.at("features")) {
      const std::string kind = f.at("kind").get<std::string>();
      require(kind == "categorical" || kind == "continuous", "invalid_schema", "unknown feature kind '" + kind + "'");
      s.features.push_back({f.at("name").get<std::string>(),
                            kind == "categorical" ? FeatureKind::categorical : FeatureKind::continuous});
    }
    s.label = j.at("label").get<std::string>();
    s.horizon_days = j.value("horizon_days", 0);
    s.validate();
    return s;
  } catch (const Json::exception& e) {
    throw Error("invalid_schema", std::string("malformed schema manifest: ") + e.what());
  }
}

inline FeatureSchema load_schema(const std::string& path) { return schema_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Train config

inline Json to_json(const TrainConfig& c) {
  return {{"kind", std::string(to_string(c.kind))},
          {"num_distributions", c.num_distributions},
          {"temperature", c.temperature},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"seed", c.seed},
          {"embedding_dim", c.embedding_dim},
          {"bottom_layers", c.bottom_layers},
          {"tower_layers", c.tower_layers},
          {"selector_layers", c.selector_layers},
          {"hidden_activation", std::string(to_string(c.hidden_activation))},
          {"no_gumbel", c.ablation.no_gumbel},
          {"no_kl", c.ablation.no_kl},
          {"no_ce", c.ablation.no_ce},
          {"no_stopgrad", c.ablation.no_stopgrad},
          {"hard_selection", c.hard_selection},
          {"optimizer", std::string(to_string(c.optimizer))}};
}

/// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig c = {}) {
  require(j.is_object(), "invalid_config", "train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "kind") c.kind = parse_model_kind(v.get<std::string>());
      else if (key == "num_distributions") c.num_distributions = v.get<std::size_t>();
      else if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "max_epochs") c.max_epochs = v.get<std::size_t>();
      else if (key == "patience") c.patience = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "embedding_dim") c.embedding_dim = v.get<std::size_t>();
      else if (key == "bottom_layers") c.bottom_layers = v.get<std::vector<std::size_t>>();
      else if (key == "tower_layers") c.tower_layers = v.get<std::vector<std::size_t>>();
      else if (key == "selector_layers") c.selector_layers = v.get<std::vector<std::size_t>>();
      else if (key == "hidden_activation") c.hidden_activation = parse_activation(v.get<std::string>());
      else if (key == "no_gumbel") c.ablation.no_gumbel = v.get<bool>();
      else if (key == "no_kl") c.ablation.no_kl = v.get<bool>();
      else if (key == "no_ce") c.ablation.no_ce = v.get<bool>();
      else if (key == "no_stopgrad") c.ablation.no_stopgrad = v.get<bool>();
      else if (key == "hard_selection") c.hard_selection = v.get<bool>();
      else if (key == "optimizer") c.optimizer = parse_optimizer(v.get<std::string>());
      else throw Error("invalid_config", "unknown train config key '" + key + "'");
    }
  } catch (const Json::exception& e) {
    throw Error("invalid_config", std::string("malformed train config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Synthetic config

inline Json to_json(const SyntheticConfig& c) {
  Json clusters = Json::array();
  for (const auto& k : c.clusters)
    clusters.push_back({{"conversion_prob", k.conversion_prob},
                        {"log_mean", k.log_mean},
                        {"log_scale", k.log_scale},
                        {"prior", k.prior}});
  return {{"clusters", clusters},
          {"n", c.n},
          {"feature_noise", c.feature_noise},
          {"center_radius", c.center_radius},
          {"seed", c.seed}};
}

inline SyntheticConfig synthetic_config_from_json(const Json& j) {
  try {
    SyntheticConfig c;
    for (const auto& k : j.at("clusters"))
      c.clusters.push_back({k.at("conversion_prob").get<double>(), k.at("log_mean").get<double>(),
                            k.at("log_scale").get<double>(), k.at("prior").get<double>()});
    const auto n = j.at("n").get<std::int64_t>();
    require(n >= 1, "invalid_config", "synthetic n must be >= 1");
    c.n = static_cast<std::size_t>(n);
    c.feature_noise = j.value("feature_noise", 0.0);
    c.center_radius = j.value("center_radius", 2.0);
    c.seed = j.value("seed", std::uint64_t{0});
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw Error("invalid_config", std::string("malformed synthetic config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics and history

namespace detail {
inline Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }
inline std::optional<double> number_or_null(const Json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}
}  // namespace detail

/// Flat record; undefined rank metrics are null.
inline Json to_json(const MetricsReport& r) {
  return {{"mae", r.mae},
          {"norm_gini", detail::optional_number(r.norm_gini)},
          {"spearman_rho", detail::optional_number(r.spearman_rho)},
          {"norm_gini_pos", detail::optional_number(r.norm_gini_pos)},
          {"spearman_rho_pos", detail::optional_number(r.spearman_rho_pos)},
          {"n", r.n},
          {"n_pos", r.n_pos}};
}

inline MetricsReport metrics_from_json(const Json& j) {
  MetricsReport r;
  r.mae = j.at("mae").get<double>();
  r.norm_gini = detail::number_or_null(j.at("norm_gini"));
  r.spearman_rho = detail::number_or_null(j.at("spearman_rho"));
  r.norm_gini_pos = detail::number_or_null(j.at("norm_gini_pos"));
  r.spearman_rho_pos = detail::number_or_null(j.at("spearman_rho_pos"));
  r.n = j.at("n").get<std::size_t>();
  r.n_pos = j.at("n_pos").get<std::size_t>();
  return r;
}

inline Json to_json(const LossBreakdown& l) {
  return {{"weighted_nll", l.weighted_nll}, {"focal_ce", l.focal_ce}, {"kl", l.kl}, {"total", l.total}};
}

inline Json to_json(const EpochRecord& e) {
  Json j = {{"epoch", e.epoch},
            {"train", to_json(e.train)},
            {"selection_counts", e.selection_counts},
            {"seconds", e.seconds},
            {"skipped_steps", e.skipped_steps}};
  j["validation"] = e.validation ? to_json(*e.validation) : Json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// Data preparation

struct PreparedDataset {
  Preprocessor preprocessor;
  PreparedData data;
};

/// Split raw rows, fit vocabularies and normalizer on train only, encode all splits.
inline PreparedDataset prepare_dataset(const FeatureSchema& schema, std::span<const RawExample> rows,
                                       std::uint64_t split_seed, std::size_t embedding_dim) {
  const auto parts = split<RawExample>(rows, split_seed);
  require(!parts.train.empty(), "empty_dataset", "training split is empty");
  PreparedDataset out;
  out.preprocessor = Preprocessor::fit(schema, parts.train);
  out.data.layout = FeatureLayout::from(schema, out.preprocessor.vocabs, embedding_dim);
  out.data.train = out.preprocessor(parts.train);
  out.data.validation = out.preprocessor(parts.validation);
  out.data.test = out.preprocessor(parts.test);
  return out;
}

// ---------------------------------------------------------------------------
// Model artifact

struct ModelArtifact {
  Model model;
  Preprocessor preprocessor;
};

inline Json artifact_to_json(const Model& model, const Preprocessor& pre) {
  Json vocab = Json::array();
  for (const auto& v : pre.vocabs) vocab.push_back(v.tokens());
  Json norm = Json::array();
  for (const auto& m : pre.normalizer.moments) norm.push_back({{"mean", m.mean}, {"std", m.std}});
  Json params = Json::array();
  for (const auto& block : model.parameters()) params.push_back(std::vector<double>(block.begin(), block.end()));
  return {{"format", kArtifactFormat},
          {"version", kArtifactVersion},
          {"single_distribution", model.single_distribution()},
          {"config", to_json(model.config)},
          {"schema", to_json(pre.schema)},
          {"vocab", vocab},
          {"normalizer", norm},
          {"parameters", params}};
}

inline ModelArtifact artifact_from_json(const Json& j) {
  try {
    require(j.value("format", std::string()) == kArtifactFormat, "version_mismatch", "not an optdist model artifact");
    const int version = j.at("version").get<int>();
    require(version == kArtifactVersion, "version_mismatch",
            "artifact version " + std::to_string(version) + " unsupported (expected " +
                std::to_string(kArtifactVersion) + ")");
    ModelArtifact a;
    a.preprocessor.schema = schema_from_json(j.at("schema"));
    for (const auto& tokens : j.at("vocab")) a.preprocessor.vocabs.emplace_back(tokens.get<std::vector<std::string>>());
    for (const auto& m : j.at("normalizer"))
      a.preprocessor.normalizer.moments.push_back({m.at("mean").get<double>(), m.at("std").get<double>()});
    const TrainConfig cfg = train_config_from_json(j.at("config"));
    a.model = build_model(cfg, FeatureLayout::from(a.preprocessor.schema, a.preprocessor.vocabs, cfg.embedding_dim));
    const ParamViews views = a.model.parameters();
    const auto& blocks = j.at("parameters");
    require(blocks.size() == views.size(), "corrupt_artifact", "parameter block count does not match config");
    for (std::size_t b = 0; b < views.size(); ++b) {
      const auto values = blocks[b].get<std::vector<double>>();
      require(values.size() == views[b].size(), "corrupt_artifact", "parameter block size does not match config");
      std::copy(values.begin(), values.end(), views[b].begin());
    }
    return a;
  } catch (const Json::exception& e) {
    throw Error("corrupt_artifact", std::string("malformed model artifact: ") + e.what());
  }
}

inline void save_artifact(const std::string& path, const Model& model, const Preprocessor& pre) {
  write_text_file(path, artifact_to_json(model, pre).dump() + "\n");
}

inline ModelArtifact load_artifact(const std::string& path) { return artifact_from_json(read_json_file(path)); }

}  // namespace optdist
