#pragma once

// Distribution learning module: L sub-distribution networks (SDNs), each
// emitting zero-inflated lognormal parameters, their negative
// log-likelihoods and the lognormal expectation used for prediction.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

#include "optdist/diffcore.hpp"

namespace optdist {

inline constexpr double kSigmaFloor = 1e-6;

struct ZilnParams {
  double p = 0.5;      // conversion probability
  double mu = 0.0;     // lognormal location
  double sigma = 1.0;  // lognormal scale
};

/// Head activations: p = sigmoid(a), mu = b, sigma = softplus(c) + floor.
inline ZilnParams ziln_from_logits(double a, double b, double c) {
  return {sigmoid(a), b, softplus(c) + kSigmaFloor};
}

/// Negative log-likelihood of one label under ZILN(p, mu, sigma).
inline double ziln_nll(const ZilnParams& params, double y, int converted) {
  require(converted == 0 || converted == 1, "invalid_argument", "conversion flag must be 0 or 1");
  if (converted == 0) return -std::log1p(-params.p);
  require(y > 0.0, "invalid_argument", "a converted example needs a positive label");
  const double z = std::log(y) - params.mu;
  return -std::log(params.p) + std::log(y * std::sqrt(2.0 * std::numbers::pi) * params.sigma) +
         z * z / (2.0 * params.sigma * params.sigma);
}

struct ZilnLossGrad {
  double loss = 0.0;
  double d_logit_p = 0.0;      // dL/da
  double d_mu = 0.0;           // dL/db
  double d_logit_sigma = 0.0;  // dL/dc
};

/// Same loss as `ziln_nll(ziln_from_logits(a, b, c), ...)`, evaluated through
/// log-sigmoid identities, together with its gradient w.r.t. the head logits.
inline ZilnLossGrad ziln_nll_from_logits(double a, double b, double c, double y, int converted) {
  ZilnLossGrad out;
  if (converted == 0) {
    out.loss = softplus(a);  // -log(1 - sigmoid(a))
    out.d_logit_p = sigmoid(a);
    return out;
  }
  require(y > 0.0, "invalid_argument", "a converted example needs a positive label");
  const double sigma = softplus(c) + kSigmaFloor;
  const double log_y = std::log(y);
  const double z = log_y - b;
  out.loss = softplus(-a) + log_y + 0.5 * std::log(2.0 * std::numbers::pi) + std::log(sigma) +
             z * z / (2.0 * sigma * sigma);
  out.d_logit_p = sigmoid(a) - 1.0;
  out.d_mu = -z / (sigma * sigma);
  const double d_sigma = 1.0 / sigma - z * z / (sigma * sigma * sigma);
  out.d_logit_sigma = d_sigma * sigmoid(c);
  return out;
}

struct Expectation {
  double value = 0.0;
  bool clamped = false;  // exp overflowed and the value was clamped to the largest finite double
};

/// E[y] = p * exp(mu + sigma^2 / 2).
inline Expectation ziln_expectation_checked(const ZilnParams& params) {
  const double v = params.p * std::exp(params.mu + 0.5 * params.sigma * params.sigma);
  if (!std::isfinite(v)) return {std::numeric_limits<double>::max(), true};
  return {v, false};
}

inline double ziln_expectation(const ZilnParams& params) { return ziln_expectation_checked(params).value; }

/// L independent towers; tower i maps h_u to the three head logits (a, b, c).
struct Dlm {
  std::vector<Mlp> sdns;

  static Dlm init(std::size_t input_width, const std::vector<std::size_t>& tower_layers, std::size_t count,
                  Activation hidden, std::uint64_t seed) {
    Dlm dlm;
    for (std::size_t i = 0; i < count; ++i) {
      MlpSpec spec;
      spec.layer_sizes.push_back(input_width);
      spec.layer_sizes.insert(spec.layer_sizes.end(), tower_layers.begin(), tower_layers.end());
      spec.layer_sizes.push_back(3);
      spec.hidden_activation = hidden;
      spec.output_activation = Activation::identity;
      spec.seed = seed + 1000 * (i + 1);
      dlm.sdns.push_back(Mlp::init(spec));
    }
    return dlm;
  }

  std::size_t size() const { return sdns.size(); }

  /// Head logits of SDN `index` for every row of h_u (batch x 3).
  Matrix head_logits(const Matrix& hu, std::size_t index, MlpTape* tape = nullptr) const {
    require(index < sdns.size(), "index_out_of_range",
            "SDN index " + std::to_string(index) + " outside [0, " + std::to_string(sdns.size()) + ")");
    return sdns[index].forward(hu, tape);
  }

  /// Distribution parameters of one SDN for a single h_u.
  ZilnParams sdn_forward(std::span<const double> hu, std::size_t index) const {
    Matrix x(1, static_cast<Eigen::Index>(hu.size()));
    for (std::size_t i = 0; i < hu.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = hu[i];
    const Matrix logits = head_logits(x, index);
    return ziln_from_logits(logits(0, 0), logits(0, 1), logits(0, 2));
  }

  Dlm zeros_like() const {
    Dlm z;
    for (const auto& s : sdns) z.sdns.push_back(s.zeros_like());
    return z;
  }

  void collect_parameters(ParamViews& out) {
    for (auto& s : sdns) s.collect_parameters(out);
  }
};

struct DlmOutput {
  std::vector<ZilnParams> params;  // one per SDN
  std::vector<double> losses;      // Q
};

/// Per-SDN parameters and losses Q for a single example.
inline DlmOutput dlm_losses(const Dlm& dlm, std::span<const double> hu, double y, int converted) {
  DlmOutput out;
  Matrix x(1, static_cast<Eigen::Index>(hu.size()));
  for (std::size_t i = 0; i < hu.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = hu[i];
  for (std::size_t i = 0; i < dlm.size(); ++i) {
    const Matrix logits = dlm.head_logits(x, i);
    out.params.push_back(ziln_from_logits(logits(0, 0), logits(0, 1), logits(0, 2)));
    out.losses.push_back(ziln_nll_from_logits(logits(0, 0), logits(0, 1), logits(0, 2), y, converted).loss);
  }
  return out;
}

}  // namespace optdist
