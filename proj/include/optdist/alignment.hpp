#pragma once

// Alignment between the DLM and the DSM: hard and soft pseudo labels built
// from the per-SDN losses, focal cross-entropy, KL divergence and the
// aggregated batch loss.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "optdist/dsm.hpp"

namespace optdist {

/// one_hot(argmin Q), lowest index on ties.
inline std::vector<double> hard_pseudo_label(std::span<const double> losses) {
  require(!losses.empty(), "dimension_mismatch", "empty loss vector");
  std::vector<double> label(losses.size(), 0.0);
  label[argmin_index(losses)] = 1.0;
  return label;
}

/// softmax(-Q).
inline std::vector<double> soft_pseudo_label(std::span<const double> losses) {
  std::vector<double> neg(losses.begin(), losses.end());
  for (double& v : neg) v = -v;
  return softmax(neg);
}

/// sum_i -y_i (1 - alpha_i)^2 log alpha_i
inline double focal_ce(std::span<const double> hard_label, std::span<const double> alpha) {
  require(hard_label.size() == alpha.size(), "dimension_mismatch", "label and alpha lengths differ");
  double loss = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (hard_label[i] == 0.0) continue;
    const double q = 1.0 - alpha[i];
    loss -= hard_label[i] * q * q * clamped_log(alpha[i]);
  }
  return loss;
}

/// d focal_ce / d alpha (labels held constant).
inline std::vector<double> focal_ce_grad(std::span<const double> hard_label, std::span<const double> alpha) {
  std::vector<double> d(alpha.size(), 0.0);
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    if (hard_label[i] == 0.0) continue;
    const double q = 1.0 - alpha[i];
    d[i] = hard_label[i] * (2.0 * q * clamped_log(alpha[i]) - q * q * clamped_log_derivative(alpha[i]));
  }
  return d;
}

/// KL(omega || alpha) = sum_i omega_i log(omega_i / alpha_i).
inline double kl_loss(std::span<const double> omega, std::span<const double> alpha) {
  require(omega.size() == alpha.size(), "dimension_mismatch", "omega and alpha lengths differ");
  double loss = 0.0;
  for (std::size_t i = 0; i < omega.size(); ++i) {
    if (omega[i] == 0.0) continue;
    loss += omega[i] * (clamped_log(omega[i]) - clamped_log(alpha[i]));
  }
  return loss;
}

inline std::vector<double> kl_loss_grad_alpha(std::span<const double> omega, std::span<const double> alpha) {
  std::vector<double> d(alpha.size());
  for (std::size_t i = 0; i < alpha.size(); ++i) d[i] = -omega[i] * clamped_log_derivative(alpha[i]);
  return d;
}

inline std::vector<double> kl_loss_grad_omega(std::span<const double> omega, std::span<const double> alpha) {
  std::vector<double> d(omega.size());
  for (std::size_t i = 0; i < omega.size(); ++i)
    d[i] = clamped_log(omega[i]) - clamped_log(alpha[i]) + omega[i] * clamped_log_derivative(omega[i]);
  return d;
}

/// L_u = sum_i w_i Q_i.
inline double weighted_dlm_loss(std::span<const double> weights, std::span<const double> losses) {
  require(weights.size() == losses.size(), "dimension_mismatch", "weights and losses lengths differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] != 0.0) sum += weights[i] * losses[i];
  return sum;
}

struct AblationFlags {
  bool no_gumbel = false;
  bool no_kl = false;
  bool no_ce = false;
  bool no_stopgrad = false;
};

struct ExampleLoss {
  double weighted_nll = 0.0;  // L_u
  double focal_ce = 0.0;
  double kl = 0.0;
};

/// Batch means, in nats.
struct LossBreakdown {
  double weighted_nll = 0.0;
  double focal_ce = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

inline LossBreakdown total_loss(std::span<const ExampleLoss> examples, const AblationFlags& flags = {}) {
  LossBreakdown out;
  if (examples.empty()) return out;
  for (const auto& e : examples) {
    out.weighted_nll += e.weighted_nll;
    if (!flags.no_ce) out.focal_ce += e.focal_ce;
    if (!flags.no_kl) out.kl += e.kl;
  }
  const double n = static_cast<double>(examples.size());
  out.weighted_nll /= n;
  out.focal_ce /= n;
  out.kl /= n;
  out.total = out.weighted_nll + out.focal_ce + out.kl;
  return out;
}

}  // namespace optdist
