#pragma once

// Distribution selection module: selection probabilities, Gumbel noise,
// straight-through Gumbel-softmax and inference-time argmax.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "optdist/diffcore.hpp"

namespace optdist {

/// Floor applied to probabilities before taking their log.
inline constexpr double kLogEpsilon = 1e-12;

inline double clamped_log(double p) { return std::log(std::max(p, kLogEpsilon)); }

/// d clamped_log(p) / dp.
inline double clamped_log_derivative(double p) { return p > kLogEpsilon ? 1.0 / p : 0.0; }

/// Lowest index wins ties.
inline std::size_t argmax_index(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline std::size_t argmin_index(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[best]) best = i;
  return best;
}

/// Max-subtracted softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), "dimension_mismatch", "softmax of an empty vector");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (out[i] = std::exp(logits[i] - m));
  for (double& v : out) v /= sum;
  return out;
}

/// Given y = softmax(x) and dL/dy, returns dL/dx.
inline std::vector<double> softmax_backward(std::span<const double> y, std::span<const double> d_y) {
  double dot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) dot += y[i] * d_y[i];
  std::vector<double> d_x(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) d_x[i] = y[i] * (d_y[i] - dot);
  return d_x;
}

/// alpha = softmax(MLP(h_u)).
inline std::vector<double> selection_probs(const Mlp& selector, std::span<const double> hu) {
  for (double v : hu) require(std::isfinite(v), "non_finite", "h_u contains a non-finite value");
  const auto logits = mlp_forward(selector, hu).output;
  return softmax(logits);
}

/// g = -log(-log(u)).
inline double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

template <class Rng>
double sample_gumbel(Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double u = unit(rng);
  while (u <= 0.0 || u >= 1.0) u = unit(rng);
  return gumbel_from_uniform(u);
}

template <class Rng>
std::vector<double> sample_gumbel(std::size_t count, Rng& rng) {
  std::vector<double> g(count);
  for (double& v : g) v = sample_gumbel(rng);
  return g;
}

struct SelectionOutput {
  std::vector<double> alpha;
  std::vector<double> noise;
  std::vector<double> soft;  // relaxed weights pi
  std::vector<double> mask;  // one-hot forward weights
  std::size_t chosen = 0;
};

/// Straight-through Gumbel-softmax. The forward weights are `mask`; gradients
/// are taken as if the weights were `soft`.
inline SelectionOutput gumbel_softmax_st(std::span<const double> alpha, std::span<const double> noise,
                                         double temperature) {
  require(temperature > 0.0 && std::isfinite(temperature), "invalid_argument", "temperature must be > 0");
  require(alpha.size() == noise.size() && !alpha.empty(), "dimension_mismatch",
          "alpha and noise must have the same non-zero length");
  SelectionOutput out;
  out.alpha.assign(alpha.begin(), alpha.end());
  out.noise.assign(noise.begin(), noise.end());
  std::vector<double> scores(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) scores[i] = (clamped_log(alpha[i]) + noise[i]) / temperature;
  out.soft = softmax(scores);
  out.chosen = argmax_index(scores);
  out.mask.assign(alpha.size(), 0.0);
  out.mask[out.chosen] = 1.0;
  return out;
}

/// dL/d alpha for L = sum_i w_i Q_i when w is the straight-through output:
/// dL/d pi_i = Q_i, then back through pi = softmax((log alpha + g) / tau).
inline std::vector<double> gumbel_softmax_backward(const SelectionOutput& sel, std::span<const double> d_soft,
                                                   double temperature) {
  const auto d_scores = softmax_backward(sel.soft, d_soft);
  std::vector<double> d_alpha(sel.alpha.size());
  for (std::size_t i = 0; i < d_alpha.size(); ++i)
    d_alpha[i] = d_scores[i] / temperature * clamped_log_derivative(sel.alpha[i]);
  return d_alpha;
}

/// Inference-time choice: argmax alpha, no noise.
inline std::size_t select_distribution(std::span<const double> alpha) { return argmax_index(alpha); }

}  // namespace optdist
