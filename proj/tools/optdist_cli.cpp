// optdist: generate | train | evaluate | sweep | gradcheck

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "optdist/optdist.hpp"

namespace fs = std::filesystem;
using namespace optdist;

namespace {

struct DataSection {
  std::string csv;
  std::string schema;
  std::uint64_t split_seed = 0;
};

struct SweepSection {
  std::string axis = "num_distributions";
  std::vector<double> values;
  std::vector<std::uint64_t> seeds{0};
};

struct RunConfig {
  Json train = Json::object();  // overlay, resolved against the command's base config
  std::optional<DataSection> data;
  std::optional<SyntheticConfig> synthetic;
  SweepSection sweep;
  std::string model;
  std::string out;
  bool corrupt_gradient = false;
};

// Command-line values, applied on top of the config file.
struct Overrides {
  Json train = Json::object();
  std::optional<std::string> csv, schema, model, axis;
  std::optional<std::uint64_t> split_seed;
  std::optional<std::size_t> n;
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const Json j = read_json_file(path);
  require(j.is_object(), "invalid_config", "run config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "train") {
        rc.train = v;
      } else if (key == "data") {
        DataSection d;
        d.csv = v.value("csv", std::string());
        d.schema = v.value("schema", std::string());
        d.split_seed = v.value("split_seed", std::uint64_t{0});
        rc.data = d;
      } else if (key == "synthetic") {
        rc.synthetic = synthetic_config_from_json(v);
      } else if (key == "sweep") {
        rc.sweep.axis = v.value("axis", rc.sweep.axis);
        rc.sweep.values = v.value("values", rc.sweep.values);
        rc.sweep.seeds = v.value("seeds", rc.sweep.seeds);
      } else if (key == "model") {
        rc.model = v.get<std::string>();
      } else if (key == "out") {
        rc.out = v.get<std::string>();
      } else {
        throw Error("invalid_config", "unknown run config key '" + key + "'");
      }
    }
  } catch (const Json::exception& e) {
    throw Error("invalid_config", std::string("malformed run config: ") + e.what());
  }
  return rc;
}

void apply(RunConfig& rc, const Overrides& o) {
  for (const auto& [k, v] : o.train.items()) rc.train[k] = v;
  if (o.csv || o.schema || o.split_seed) {
    if (!rc.data) rc.data = DataSection{};
    if (o.csv) rc.data->csv = *o.csv;
    if (o.schema) rc.data->schema = *o.schema;
    if (o.split_seed) rc.data->split_seed = *o.split_seed;
  }
  if (o.model) rc.model = *o.model;
  if (o.axis) rc.sweep.axis = *o.axis;
  if (!o.values.empty()) rc.sweep.values = o.values;
  if (!o.seeds.empty()) rc.sweep.seeds = o.seeds;
  if (o.n) {
    if (!rc.synthetic) rc.synthetic = SyntheticConfig::four_clusters(*o.n, 0);
    rc.synthetic->n = *o.n;
  }
}

/// Resolves the train section against `base`, collecting problems instead of throwing.
TrainConfig resolve_train(const RunConfig& rc, TrainConfig base, std::vector<std::string>& problems) {
  try {
    base = train_config_from_json(rc.train, base);
  } catch (const Error& e) {
    problems.emplace_back(e.what());
    return base;
  }
  for (auto& p : base.problems()) problems.push_back(std::move(p));
  return base;
}

void check_file(const std::string& path, const char* what, std::vector<std::string>& problems) {
  if (path.empty())
    problems.push_back(std::string(what) + " path is required");
  else if (!fs::is_regular_file(path))
    problems.push_back(std::string(what) + " '" + path + "' does not exist");
}

void check_out(const std::string& out, std::vector<std::string>& problems) {
  if (out.empty()) {
    problems.emplace_back("--out directory is required");
    return;
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) problems.push_back("cannot create output directory '" + out + "'");
}

void fail_if(const std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::string msg;
  for (const auto& p : problems) msg += (msg.empty() ? "" : "; ") + p;
  throw Error("invalid_config", msg);
}

std::string path_in(const std::string& dir, const char* name) { return (fs::path(dir) / name).string(); }

struct LoadedData {
  FeatureSchema schema;
  std::vector<RawExample> rows;
};

LoadedData load_data(const DataSection& d) {
  LoadedData out;
  out.schema = load_schema(d.schema);
  out.rows = load_csv(d.csv, out.schema);
  return out;
}

std::string format_epoch(const EpochRecord& e) {
  std::ostringstream s;
  s << "epoch=" << e.epoch << " loss=" << e.train.total << " nll=" << e.train.weighted_nll
    << " ce=" << e.train.focal_ce << " kl=" << e.train.kl;
  if (e.validation) {
    s << " val_mae=" << e.validation->mae;
    if (e.validation->norm_gini) s << " val_norm_gini=" << *e.validation->norm_gini;
  }
  s << " selection=";
  for (std::size_t i = 0; i < e.selection_counts.size(); ++i) s << (i ? "," : "") << e.selection_counts[i];
  s << " skipped=" << e.skipped_steps << " seconds=" << e.seconds;
  return s.str();
}

// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& rc) {
  std::vector<std::string> problems;
  if (!rc.synthetic) problems.emplace_back("synthetic section is required");
  check_out(rc.out, problems);
  fail_if(problems);

  const SyntheticData data = generate_synthetic(*rc.synthetic);
  write_csv(path_in(rc.out, "data.csv"), data.schema, data.examples);
  write_text_file(path_in(rc.out, "schema.json"), to_json(data.schema).dump(2) + "\n");
  std::ostringstream clusters;
  clusters << "cluster\n";
  for (int c : data.clusters) clusters << c << "\n";
  write_text_file(path_in(rc.out, "clusters.csv"), clusters.str());

  std::size_t positives = 0;
  for (const auto& ex : data.examples) positives += ex.label > 0.0;
  std::printf("n=%zu positive_ratio=%.6f\n", data.examples.size(),
              static_cast<double>(positives) / static_cast<double>(data.examples.size()));
  return 0;
}

int cmd_train(const RunConfig& rc) {
  std::vector<std::string> problems;
  const TrainConfig cfg = resolve_train(rc, {}, problems);
  if (!rc.data) {
    problems.emplace_back("data section is required");
  } else {
    check_file(rc.data->csv, "data csv", problems);
    check_file(rc.data->schema, "schema", problems);
  }
  check_out(rc.out, problems);
  fail_if(problems);

  const LoadedData loaded = load_data(*rc.data);
  const PreparedDataset prepared = prepare_dataset(loaded.schema, loaded.rows, rc.data->split_seed, cfg.embedding_dim);

  std::ofstream history(path_in(rc.out, "history.jsonl"));
  require(static_cast<bool>(history), "io_error", "cannot write history file");
  const TrainResult trained = train(cfg, prepared.data.layout, prepared.data.train, prepared.data.validation,
                                    [&](const EpochRecord& e) {
                                      history << to_json(e).dump() << "\n";
                                      std::printf("%s\n", format_epoch(e).c_str());
                                      std::fflush(stdout);
                                    });
  save_artifact(path_in(rc.out, "model.json"), trained.model, prepared.preprocessor);

  const MetricsReport test = evaluate(trained.model, prepared.data.test);
  Json record = {{"split", "test"},
                 {"metrics", to_json(test)},
                 {"config", to_json(cfg)},
                 {"epochs_run", trained.history.epochs.size()}};
  record["best_epoch"] = trained.history.best_epoch ? Json(trained.history.epochs[*trained.history.best_epoch].epoch)
                                                    : Json(nullptr);
  write_text_file(path_in(rc.out, "metrics.json"), record.dump(2) + "\n");
  std::printf("test %s\n", to_json(test).dump().c_str());
  return 0;
}

int cmd_evaluate(const RunConfig& rc) {
  std::vector<std::string> problems;
  check_file(rc.model, "model artifact", problems);
  if (!rc.data)
    problems.emplace_back("data section is required");
  else
    check_file(rc.data->csv, "data csv", problems);
  check_out(rc.out, problems);
  fail_if(problems);

  const ModelArtifact artifact = load_artifact(rc.model);
  const FeatureSchema& expected = artifact.preprocessor.schema;
  if (!rc.data->schema.empty()) {
    const FeatureSchema actual = load_schema(rc.data->schema);
    const auto diff = schema_diff(expected, actual);
    if (!diff.empty()) {
      std::string msg;
      for (const auto& d : diff) msg += (msg.empty() ? "" : "; ") + d;
      throw Error("schema_mismatch", msg);
    }
  }
  const auto rows = load_csv(rc.data->csv, expected);
  const MetricsReport report = evaluate(artifact.model, artifact.preprocessor(rows));
  write_text_file(path_in(rc.out, "report.json"), to_json(report).dump(2) + "\n");
  std::printf("%s\n", to_json(report).dump().c_str());
  return 0;
}

std::string format_pm(double mean, double sd) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f±%.6f", mean, sd);
  return buf;
}

int cmd_sweep(const RunConfig& rc) {
  std::vector<std::string> problems;
  const TrainConfig base = resolve_train(rc, {}, problems);
  std::optional<SweepAxis> axis;
  try {
    axis = parse_sweep_axis(rc.sweep.axis);
  } catch (const Error& e) {
    problems.emplace_back(e.what());
  }
  if (rc.sweep.values.empty()) problems.emplace_back("sweep values are required");
  if (rc.sweep.seeds.empty()) problems.emplace_back("sweep seeds are required");
  if (axis)
    for (double v : rc.sweep.values) {
      try {
        auto p = apply_setting(base, *axis, v).problems();
        problems.insert(problems.end(), p.begin(), p.end());
      } catch (const Error& e) {
        problems.emplace_back(e.what());
      }
    }
  if (rc.data) {
    check_file(rc.data->csv, "data csv", problems);
    check_file(rc.data->schema, "schema", problems);
  } else if (!rc.synthetic) {
    problems.emplace_back("sweep needs a data or synthetic section");
  }
  check_out(rc.out, problems);
  fail_if(problems);

  std::map<std::uint64_t, PreparedData> cache;
  std::optional<PreparedData> fixed;
  if (rc.data) {
    const LoadedData loaded = load_data(*rc.data);
    fixed = prepare_dataset(loaded.schema, loaded.rows, rc.data->split_seed, base.embedding_dim).data;
  }
  // Without a CSV every seed draws its own synthetic dataset and split.
  const DataForSeed data = [&](std::uint64_t seed) -> const PreparedData& {
    if (fixed) return *fixed;
    auto it = cache.find(seed);
    if (it == cache.end()) {
      SyntheticConfig sc = *rc.synthetic;
      sc.seed = seed;
      const SyntheticData d = generate_synthetic(sc);
      it = cache.emplace(seed, prepare_dataset(d.schema, d.examples, seed, base.embedding_dim).data).first;
    }
    return it->second;
  };
  const auto rows = run_sweep(base, *axis, rc.sweep.values, rc.sweep.seeds, data);

  Json table = Json::array();
  std::ostringstream tsv;
  tsv << to_string(*axis) << "\tnorm_gini\tmae\n";
  for (const auto& r : rows) {
    Json per_seed = Json::array();
    for (std::size_t i = 0; i < r.per_seed.size(); ++i)
      per_seed.push_back({{"seed", r.seeds[i]}, {"metrics", to_json(r.per_seed[i])}});
    table.push_back({{"setting", r.setting},
                     {"norm_gini_mean", r.mean_norm_gini()},
                     {"norm_gini_std", r.std_norm_gini()},
                     {"mae_mean", r.mean_mae()},
                     {"mae_std", r.std_mae()},
                     {"runs", per_seed}});
    tsv << r.setting << "\t" << format_pm(r.mean_norm_gini(), r.std_norm_gini()) << "\t"
        << format_pm(r.mean_mae(), r.std_mae()) << "\n";
  }
  const Json out = {{"axis", std::string(to_string(*axis))}, {"seeds", rc.sweep.seeds}, {"rows", table}};
  write_text_file(path_in(rc.out, "sweep.json"), out.dump(2) + "\n");
  write_text_file(path_in(rc.out, "sweep.tsv"), tsv.str());
  std::printf("%s", tsv.str().c_str());
  return 0;
}

int cmd_gradcheck(const RunConfig& rc) {
  GradCheckOptions o = GradCheckOptions::toy();
  std::vector<std::string> problems;
  o.config = resolve_train(rc, o.config, problems);
  fail_if(problems);
  o.corrupt_gradient = rc.corrupt_gradient;

  const GradCheckReport r = run_gradcheck(o);
  std::printf("max_relative_error=%.3e threshold=%.0e checked=%zu worst_block=%zu worst_index=%zu %s\n",
              r.result.max_relative_error, r.threshold, r.result.checked, r.result.worst_block,
              r.result.worst_index, r.pass ? "PASS" : "FAIL");
  return r.pass ? 0 : 3;
}

// ---------------------------------------------------------------------------

void add_train_flags(CLI::App& app, Overrides& o) {
  auto value = [&](const std::string& name, auto sample) {
    using T = decltype(sample);
    app.add_option_function<T>("--" + name, [&o, name](const T& v) { o.train[name] = v; },
                               "train config field " + name);
  };
  value("kind", std::string());
  value("num_distributions", std::size_t{});
  value("temperature", double{});
  value("learning_rate", double{});
  value("batch_size", std::size_t{});
  value("max_epochs", std::size_t{});
  value("patience", std::size_t{});
  value("seed", std::uint64_t{});
  value("embedding_dim", std::size_t{});
  value("bottom_layers", std::vector<std::size_t>());
  value("tower_layers", std::vector<std::size_t>());
  value("selector_layers", std::vector<std::size_t>());
  value("hidden_activation", std::string());
  value("optimizer", std::string());
  for (const char* name : {"no_gumbel", "no_kl", "no_ce", "no_stopgrad", "hard_selection"}) {
    const std::string key = name;
    app.add_flag_function("--" + key, [&o, key](std::int64_t count) { o.train[key] = count > 0; },
                          "train config flag " + key + " (use --" + key + "=false to clear)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Customer lifetime value modelling with learnable sub-distribution selection"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  std::string out;
  bool corrupt = false;

  std::map<std::string, CLI::App*> commands;
  const std::vector<std::pair<std::string, std::string>> names = {
      {"generate", "write a synthetic zero-inflated lognormal mixture dataset"},
      {"train", "train a model and save the artifact, history and test metrics"},
      {"evaluate", "score a saved model on a CSV dataset"},
      {"sweep", "train over a hyperparameter grid and tabulate mean±std"},
      {"gradcheck", "compare analytic and finite-difference gradients on a toy model"}};
  for (const auto& [name, help] : names) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory");
    add_train_flags(*sub, o);
    commands[name] = sub;
  }
  for (const char* name : {"train", "evaluate", "sweep"}) {
    CLI::App* sub = commands[name];
    sub->add_option_function<std::string>("--csv", [&](const std::string& v) { o.csv = v; }, "data CSV");
    sub->add_option_function<std::string>("--schema", [&](const std::string& v) { o.schema = v; },
                                          "schema manifest JSON");
  }
  for (const char* name : {"train", "sweep"})
    commands[name]->add_option_function<std::uint64_t>(
        "--split_seed", [&](std::uint64_t v) { o.split_seed = v; }, "train/validation/test split seed");
  commands["evaluate"]->add_option_function<std::string>("--model", [&](const std::string& v) { o.model = v; },
                                                         "model artifact");
  commands["sweep"]->add_option_function<std::string>("--axis", [&](const std::string& v) { o.axis = v; },
                                                      "num_distributions | temperature | learning_rate");
  commands["sweep"]->add_option("--values", o.values, "axis values");
  commands["sweep"]->add_option("--seeds", o.seeds, "seed set used for every setting");
  commands["generate"]->add_option_function<std::size_t>("--n", [&](std::size_t v) { o.n = v; },
                                                         "number of rows");
  commands["gradcheck"]->add_flag("--corrupt_gradient", corrupt, "perturb one analytic gradient entry");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  }

  try {
    RunConfig rc = load_run_config(config_path);
    apply(rc, o);
    if (!out.empty()) rc.out = out;
    rc.corrupt_gradient = corrupt;
    if (rc.synthetic) rc.synthetic->validate();

    if (commands["generate"]->parsed()) return cmd_generate(rc);
    if (commands["train"]->parsed()) return cmd_train(rc);
    if (commands["evaluate"]->parsed()) return cmd_evaluate(rc);
    if (commands["sweep"]->parsed()) return cmd_sweep(rc);
    return cmd_gradcheck(rc);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
}
