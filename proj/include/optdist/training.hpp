#pragma once

// Joint single-level training (one update of all parameters per
// mini-batch), early stopping on validation Norm-GINI and sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "optdist/metrics.hpp"
#include "optdist/model.hpp"

namespace optdist {

struct Optimizer {
  OptimizerKind kind = OptimizerKind::adam;
  AdamState adam;

  static Optimizer for_model(Model& model) {
    Optimizer opt;
    opt.kind = model.config.optimizer;
    opt.adam = AdamState::for_parameters(model.parameters());
    return opt;
  }

  StepStatus step(Model& model, const Model& grads, double learning_rate) {
    const ParamViews params = model.parameters();
    const ConstParamViews g = grads.parameters();
    return kind == OptimizerKind::adam ? adam_step(params, g, adam, learning_rate)
                                       : sgd_step(params, g, learning_rate);
  }
};

/// Gumbel noise for one mini-batch; empty when the model does not use it.
template <class Rng>
Matrix draw_batch_noise(const Model& model, std::size_t batch_size, Rng& rng) {
  if (model.config.kind != ModelKind::optdist || model.config.ablation.no_gumbel) return {};
  Matrix noise(static_cast<Eigen::Index>(batch_size), static_cast<Eigen::Index>(model.dlm.size()));
  for (Eigen::Index r = 0; r < noise.rows(); ++r)
    for (Eigen::Index c = 0; c < noise.cols(); ++c) noise(r, c) = sample_gumbel(rng);
  return noise;
}

struct StepResult {
  LossBreakdown loss;  // before the update
  bool skipped = false;
};

/// One joint update of every parameter. Non-finite losses or gradients skip the update.
template <class Rng>
StepResult train_step(Model& model, Optimizer& optimizer, BatchView batch, Rng& noise_rng,
                      std::optional<double> learning_rate = std::nullopt) {
  const Matrix noise = draw_batch_noise(model, batch.size(), noise_rng);
  Model grads = model.zeros_like();
  ObjectiveOptions opt;
  opt.noise = noise.size() ? &noise : nullptr;
  opt.grads = &grads;
  StepResult result;
  result.loss = batch_objective(model, batch, opt);
  if (!std::isfinite(result.loss.total)) {
    result.skipped = true;
    return result;
  }
  const double lr = learning_rate.value_or(model.config.learning_rate);
  result.skipped = optimizer.step(model, grads, lr) == StepStatus::skipped_non_finite;
  return result;
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown train;
  std::optional<MetricsReport> validation;
  std::vector<std::size_t> selection_counts;  // inference-time SDN choice over the validation split
  double seconds = 0.0;
  std::size_t skipped_steps = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> best_epoch;  // index into `epochs`
};

struct TrainResult {
  Model model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

inline TrainResult train(const TrainConfig& config, const FeatureLayout& layout,
                         std::span<const EncodedExample> train_set, std::span<const EncodedExample> validation,
                         const EpochCallback& on_epoch = {}) {
  require(!train_set.empty(), "empty_dataset", "training split is empty");
  TrainResult result{build_model(config, layout), {}};
  if (config.max_epochs == 0) return result;

  Model& model = result.model;
  Optimizer optimizer = Optimizer::for_model(model);
  std::mt19937_64 shuffle_rng(component_seed(config.seed, 100));
  std::mt19937_64 noise_rng(component_seed(config.seed, 101));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  Model best = model;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch + 1;
    std::vector<const EncodedExample*> batch;
    double seen = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&train_set[order[i]]);
      const StepResult step = train_step(model, optimizer, batch, noise_rng);
      if (step.skipped) {
        ++rec.skipped_steps;
        continue;
      }
      const double w = static_cast<double>(batch.size());
      rec.train.weighted_nll += w * step.loss.weighted_nll;
      rec.train.focal_ce += w * step.loss.focal_ce;
      rec.train.kl += w * step.loss.kl;
      rec.train.total += w * step.loss.total;
      seen += w;
    }
    if (seen > 0.0) {
      rec.train.weighted_nll /= seen;
      rec.train.focal_ce /= seen;
      rec.train.kl /= seen;
      rec.train.total /= seen;
    }

    bool improved = true;
    if (!validation.empty()) {
      const Evaluation ev = evaluate_detailed(model, validation);
      rec.validation = ev.report;
      rec.selection_counts.assign(model.dlm.size() ? model.dlm.size() : 1, 0);
      for (std::size_t s : ev.prediction.chosen) ++rec.selection_counts[s];
      const double metric = ev.report.norm_gini.value_or(-std::numeric_limits<double>::infinity());
      improved = !result.history.best_epoch || metric > best_metric;
      if (improved) best_metric = metric;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (improved) {
      best = model;
      result.history.best_epoch = result.history.epochs.size() - 1;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.model = std::move(best);
  return result;
}

/// Encoded splits plus the layout the model is built for.
struct PreparedData {
  FeatureLayout layout;
  std::vector<EncodedExample> train, validation, test;
};

struct RunResult {
  TrainResult trained;
  Evaluation test;
};

inline RunResult train_and_evaluate(const TrainConfig& config, const PreparedData& data) {
  RunResult r{train(config, data.layout, data.train, data.validation), {}};
  r.test = evaluate_detailed(r.trained.model, data.test);
  return r;
}

enum class SweepAxis { num_distributions, temperature, learning_rate };

inline std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::num_distributions: return "num_distributions";
    case SweepAxis::temperature: return "temperature";
    case SweepAxis::learning_rate: return "learning_rate";
  }
  return "num_distributions";
}

inline SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "num_distributions" || s == "L") return SweepAxis::num_distributions;
  if (s == "temperature" || s == "tau") return SweepAxis::temperature;
  if (s == "learning_rate" || s == "lr") return SweepAxis::learning_rate;
  throw Error("invalid_config", "unknown sweep axis '" + std::string(s) + "'");
}

inline TrainConfig apply_setting(TrainConfig config, SweepAxis axis, double value) {
  switch (axis) {
    case SweepAxis::num_distributions:
      require(value >= 1.0 && value == std::floor(value), "invalid_config",
              "num_distributions sweep values must be positive integers");
      config.num_distributions = static_cast<std::size_t>(value);
      break;
    case SweepAxis::temperature: config.temperature = value; break;
    case SweepAxis::learning_rate: config.learning_rate = value; break;
  }
  return config;
}

struct SweepRow {
  double setting = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> per_seed;  // test-split metrics

  double mean_norm_gini() const { return mean_of([](const MetricsReport& r) { return r.norm_gini.value_or(NAN); }); }
  double std_norm_gini() const { return std_of([](const MetricsReport& r) { return r.norm_gini.value_or(NAN); }); }
  double mean_mae() const { return mean_of([](const MetricsReport& r) { return r.mae; }); }
  double std_mae() const { return std_of([](const MetricsReport& r) { return r.mae; }); }

 private:
  template <class F>
  double mean_of(F f) const {
    double s = 0.0;
    for (const auto& r : per_seed) s += f(r);
    return per_seed.empty() ? NAN : s / static_cast<double>(per_seed.size());
  }
  template <class F>
  double std_of(F f) const {
    const double m = mean_of(f);
    double s = 0.0;
    for (const auto& r : per_seed) s += (f(r) - m) * (f(r) - m);
    return per_seed.empty() ? NAN : std::sqrt(s / static_cast<double>(per_seed.size()));
  }
};

using DataForSeed = std::function<const PreparedData&(std::uint64_t seed)>;

/// One train + test evaluation per (setting, seed).
inline std::vector<SweepRow> run_sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                                       std::span<const std::uint64_t> seeds, const DataForSeed& data) {
  require(!values.empty(), "invalid_config", "sweep axis has no values");
  require(!seeds.empty(), "invalid_config", "sweep needs at least one seed");
  std::vector<SweepRow> rows;
  for (double v : values) {
    SweepRow row;
    row.setting = v;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = apply_setting(base, axis, v);
      cfg.seed = seed;
      row.seeds.push_back(seed);
      row.per_seed.push_back(train_and_evaluate(cfg, data(seed)).test.report);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::vector<SweepRow> run_sweep(const TrainConfig& base, SweepAxis axis, std::span<const double> values,
                                       std::span<const std::uint64_t> seeds, const PreparedData& data) {
  return run_sweep(base, axis, values, seeds, [&](std::uint64_t) -> const PreparedData& { return data; });
}

}  // namespace optdist
