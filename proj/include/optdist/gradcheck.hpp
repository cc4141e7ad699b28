#pragma once

// Whole-model gradient check: analytic gradient of the training objective
// against central differences, with Gumbel noise and every stop-gradient
// quantity frozen at the base parameters.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "optdist/training.hpp"

namespace optdist {

struct GradCheckOptions {
  TrainConfig config;
  std::size_t batch_size = 8;
  std::size_t categorical_features = 2;
  std::size_t vocab_size = 5;
  std::size_t continuous_features = 2;
  double step = 1e-5;
  double threshold = 1e-4;
  std::uint64_t data_seed = 7;
  bool corrupt_gradient = false;  // fault injection: perturbs one analytic entry

  /// 2 categorical x vocab 5 x dim 3, 2 continuous, L = 3, all losses on.
  static GradCheckOptions toy() {
    GradCheckOptions o;
    o.config.kind = ModelKind::optdist;
    o.config.num_distributions = 3;
    o.config.embedding_dim = 3;
    o.config.bottom_layers = {8};
    o.config.tower_layers = {8, 6};
    o.config.selector_layers = {8};
    o.config.temperature = 1.0;
    o.config.seed = 11;
    return o;
  }
};

struct GradCheckReport {
  GradCheckResult result;
  double threshold = 0.0;
  bool pass = false;
};

inline std::vector<EncodedExample> random_toy_batch(const GradCheckOptions& o) {
  std::mt19937_64 rng(o.data_seed);
  std::uniform_int_distribution<int> cat(0, static_cast<int>(o.vocab_size) - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<EncodedExample> out(o.batch_size);
  for (auto& ex : out) {
    for (std::size_t i = 0; i < o.categorical_features; ++i) ex.categorical.push_back(cat(rng));
    for (std::size_t i = 0; i < o.continuous_features; ++i) ex.continuous.push_back(normal(rng));
    ex.converted = unit(rng) < 0.5 ? 1 : 0;
    ex.label = ex.converted ? std::exp(1.0 + normal(rng)) : 0.0;
  }
  return out;
}

inline FeatureLayout toy_layout(const GradCheckOptions& o) {
  FeatureLayout layout;
  for (std::size_t i = 0; i < o.categorical_features; ++i) {
    layout.order.push_back(FeatureKind::categorical);
    layout.vocab_sizes.push_back(o.vocab_size);
  }
  for (std::size_t i = 0; i < o.continuous_features; ++i) layout.order.push_back(FeatureKind::continuous);
  layout.embedding_dim = o.config.embedding_dim;
  return layout;
}

/// Checks `model`'s analytic gradient on `batch` with noise drawn from `noise_seed`.
inline GradCheckReport check_model_gradient(Model& model, BatchView batch, std::uint64_t noise_seed, double step,
                                            double threshold, bool corrupt = false) {
  std::mt19937_64 rng(noise_seed);
  const Matrix noise = draw_batch_noise(model, batch.size(), rng);
  const Matrix* noise_ptr = noise.size() ? &noise : nullptr;

  Model grads = model.zeros_like();
  FrozenSelection frozen;
  ObjectiveOptions opt;
  opt.noise = noise_ptr;
  opt.grads = &grads;
  opt.capture = &frozen;
  batch_objective(model, batch, opt);

  ParamViews analytic = grads.parameters();
  if (corrupt) {
    for (auto& block : analytic) {
      if (!block.empty()) {
        block[0] += 1e-2 + 0.5 * std::abs(block[0]);
        break;
      }
    }
  }

  ObjectiveOptions replay;
  replay.noise = noise_ptr;
  replay.frozen = &frozen;
  auto loss = [&] { return batch_objective(model, batch, replay).total; };

  GradCheckReport report;
  report.threshold = threshold;
  report.result = finite_diff_check(loss, model.parameters(), const_views(analytic), step);
  report.pass = report.result.max_relative_error <= threshold;
  return report;
}

/// Zero biases put ReLU pre-activations exactly on the kink whenever a whole
/// upstream layer is inactive; small random biases move the check point off it.
inline void jitter_biases(Model& model, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  auto jitter = [&](Mlp& mlp) {
    for (auto& layer : mlp.layers())
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) += dist(rng);
  };
  jitter(model.rep.bottom);
  jitter(model.aux_rep.bottom);
  for (auto& sdn : model.dlm.sdns) jitter(sdn);
  jitter(model.selector);
  jitter(model.conversion_head);
  jitter(model.value_head);
}

inline GradCheckReport run_gradcheck(const GradCheckOptions& o) {
  const auto data = random_toy_batch(o);
  Model model = build_model(o.config, toy_layout(o));
  jitter_biases(model, o.data_seed + 2);
  const auto batch = as_batch(data);
  return check_model_gradient(model, batch, o.data_seed + 1, o.step, o.threshold, o.corrupt_gradient);
}

}  // namespace optdist
