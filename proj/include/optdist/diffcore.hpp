#pragma once

// Dense layers, MLP forward/backward with an explicit tape, Adam/SGD
// updates and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "optdist/error.hpp"

namespace optdist {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Mutable views over every trainable array of a model, in a fixed order.
using ParamViews = std::vector<std::span<double>>;
using ConstParamViews = std::vector<std::span<const double>>;

inline ConstParamViews const_views(const ParamViews& views) {
  return {views.begin(), views.end()};
}

// ---------------------------------------------------------------------------
// Scalar helpers

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

enum class Activation { identity, relu, sigmoid, softplus };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "softplus") return Activation::softplus;
  throw Error("invalid_config", "unknown activation '" + std::string(name) + "'");
}

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::sigmoid: return sigmoid(x);
    case Activation::softplus: return softplus(x);
  }
  return x;
}

/// d activation / d pre-activation, evaluated at pre-activation x.
inline double activation_derivative(Activation a, double x) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::softplus: return sigmoid(x);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Dense layers

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in_size() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_size() const { return static_cast<std::size_t>(weights.rows()); }

  void validate() const {
    require(bias.size() == weights.rows(), "dimension_mismatch",
            "dense layer bias length does not match output size");
    require(weights.allFinite() && bias.allFinite(), "non_finite", "dense layer holds non-finite values");
  }
};

struct MlpSpec {
  /// Input size followed by the output size of every layer, e.g. {7, 64, 3}.
  std::vector<std::size_t> layer_sizes;
  Activation hidden_activation = Activation::relu;
  Activation output_activation = Activation::identity;
  std::uint64_t seed = 0;

  void validate() const {
    require(layer_sizes.size() >= 2, "invalid_config", "an MLP needs an input size and at least one layer");
    for (std::size_t s : layer_sizes) require(s >= 1, "invalid_config", "MLP layer sizes must be >= 1");
  }
};

/// Values recorded by a forward pass; enough to backpropagate exactly.
struct MlpTape {
  std::vector<Matrix> inputs;           // per layer, batch x in
  std::vector<Matrix> pre_activations;  // per layer, batch x out
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].validate();
      if (i > 0)
        require(layers_[i].in_size() == layers_[i - 1].out_size(), "dimension_mismatch",
                "consecutive MLP layers disagree on width");
    }
  }

  /// Zero-mean uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.
  static Mlp init(const MlpSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    std::vector<DenseLayer> layers;
    const std::size_t count = spec.layer_sizes.size() - 1;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t in = spec.layer_sizes[i];
      const std::size_t out = spec.layer_sizes[i + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      DenseLayer layer;
      layer.weights.resize(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r)
        for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = dist(rng);
      layer.bias = Vector::Zero(static_cast<Eigen::Index>(out));
      layer.activation = i + 1 == count ? spec.output_activation : spec.hidden_activation;
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  }

  bool empty() const { return layers_.empty(); }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t input_size() const { return layers_.empty() ? 0 : layers_.front().in_size(); }
  std::size_t output_size() const { return layers_.empty() ? 0 : layers_.back().out_size(); }

  /// Batched forward pass (one example per row). An empty MLP is the identity.
  Matrix forward(const Matrix& input, MlpTape* tape = nullptr) const {
    if (tape) {
      tape->inputs.clear();
      tape->pre_activations.clear();
    }
    if (layers_.empty()) return input;
    require(static_cast<std::size_t>(input.cols()) == input_size(), "dimension_mismatch",
            "MLP input width " + std::to_string(input.cols()) + " != expected " +
                std::to_string(input_size()));
    Matrix current = input;
    for (const DenseLayer& layer : layers_) {
      Matrix pre = current * layer.weights.transpose();
      pre.rowwise() += layer.bias.transpose();
      Matrix post = pre.unaryExpr([&](double x) { return activate(layer.activation, x); });
      if (tape) {
        tape->inputs.push_back(std::move(current));
        tape->pre_activations.push_back(std::move(pre));
      }
      current = std::move(post);
    }
    return current;
  }

  /// Accumulates parameter gradients into `grads` (same shape as *this) and
  /// returns the gradient with respect to the input batch.
  Matrix backward(const MlpTape& tape, const Matrix& upstream, Mlp& grads) const {
    if (layers_.empty()) return upstream;
    require(tape.inputs.size() == layers_.size(), "invalid_tape", "tape does not match this MLP");
    require(grads.layers_.size() == layers_.size(), "dimension_mismatch", "gradient MLP shape mismatch");
    require(static_cast<std::size_t>(upstream.cols()) == output_size() &&
                upstream.rows() == tape.pre_activations.back().rows(),
            "dimension_mismatch", "upstream gradient shape does not match MLP output");
    Matrix delta = upstream;
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const DenseLayer& layer = layers_[k];
      const Matrix& pre = tape.pre_activations[k];
      if (layer.activation != Activation::identity) {
        for (Eigen::Index r = 0; r < delta.rows(); ++r)
          for (Eigen::Index c = 0; c < delta.cols(); ++c)
            delta(r, c) *= activation_derivative(layer.activation, pre(r, c));
      }
      grads.layers_[k].weights.noalias() += delta.transpose() * tape.inputs[k];
      grads.layers_[k].bias += delta.colwise().sum().transpose();
      Matrix next = delta * layer.weights;
      delta = std::move(next);
    }
    return delta;
  }

  Mlp zeros_like() const {
    Mlp out;
    out.layers_.reserve(layers_.size());
    for (const DenseLayer& l : layers_) {
      DenseLayer z;
      z.weights = Matrix::Zero(l.weights.rows(), l.weights.cols());
      z.bias = Vector::Zero(l.bias.size());
      z.activation = l.activation;
      out.layers_.push_back(std::move(z));
    }
    return out;
  }

  void collect_parameters(ParamViews& out) {
    for (DenseLayer& l : layers_) {
      out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
      out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
    }
  }

 private:
  std::vector<DenseLayer> layers_;
};

inline std::vector<DenseLayer> init_mlp(const MlpSpec& spec) { return Mlp::init(spec).layers(); }

struct MlpForwardResult {
  std::vector<double> output;
  MlpTape tape;
};

/// Single-example forward pass.
inline MlpForwardResult mlp_forward(const Mlp& mlp, std::span<const double> input) {
  for (double v : input) require(std::isfinite(v), "non_finite", "MLP input contains a non-finite value");
  Matrix x(1, static_cast<Eigen::Index>(input.size()));
  for (std::size_t i = 0; i < input.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = input[i];
  MlpForwardResult result;
  Matrix y = mlp.forward(x, &result.tape);
  result.output.assign(y.data(), y.data() + y.size());
  return result;
}

/// Gradients of a scalar loss that depends on the MLP output through
/// `d_output` (dL/d output). Returns zero-initialised-then-accumulated grads.
inline Mlp mlp_gradient(const Mlp& mlp, const MlpTape& tape, std::span<const double> d_output) {
  require(d_output.size() == mlp.output_size(), "dimension_mismatch",
          "loss gradient must have one entry per MLP output");
  Matrix upstream(1, static_cast<Eigen::Index>(d_output.size()));
  for (std::size_t i = 0; i < d_output.size(); ++i) upstream(0, static_cast<Eigen::Index>(i)) = d_output[i];
  Mlp grads = mlp.zeros_like();
  mlp.backward(tape, upstream, grads);
  return grads;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class StepStatus { applied, skipped_non_finite };

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static AdamState for_parameters(const ParamViews& params) {
    AdamState s;
    for (const auto& p : params) {
      s.first_moment.emplace_back(p.size(), 0.0);
      s.second_moment.emplace_back(p.size(), 0.0);
    }
    return s;
  }
};

namespace detail {
inline void check_shapes(const ParamViews& params, const ConstParamViews& grads) {
  require(params.size() == grads.size(), "dimension_mismatch", "parameter/gradient block count mismatch");
  for (std::size_t b = 0; b < params.size(); ++b)
    require(params[b].size() == grads[b].size(), "dimension_mismatch", "parameter/gradient block size mismatch");
}

inline bool all_finite(const ConstParamViews& grads) {
  for (const auto& g : grads)
    for (double v : g)
      if (!std::isfinite(v)) return false;
  return true;
}
}  // namespace detail

/// Bias-corrected Adam. Non-finite gradients leave everything untouched.
inline StepStatus adam_step(const ParamViews& params, const ConstParamViews& grads, AdamState& state,
                            double learning_rate) {
  detail::check_shapes(params, grads);
  require(state.first_moment.size() == params.size(), "dimension_mismatch", "Adam state shape mismatch");
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "invalid_config",
          "learning rate must be finite and non-negative");
  if (!detail::all_finite(grads)) return StepStatus::skipped_non_finite;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    require(m.size() == params[b].size(), "dimension_mismatch", "Adam state shape mismatch");
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[b][i] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
  return StepStatus::applied;
}

/// Plain gradient step: theta <- theta - lr * grad.
inline StepStatus sgd_step(const ParamViews& params, const ConstParamViews& grads, double learning_rate) {
  detail::check_shapes(params, grads);
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "invalid_config",
          "learning rate must be finite and non-negative");
  if (!detail::all_finite(grads)) return StepStatus::skipped_non_finite;
  for (std::size_t b = 0; b < params.size(); ++b)
    for (std::size_t i = 0; i < params[b].size(); ++i) params[b][i] -= learning_rate * grads[b][i];
  return StepStatus::applied;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_block = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares `analytic` against central differences of `loss()` taken by
/// perturbing `params` in place (each entry is restored afterwards).
/// Relative error is |a - n| / max(|a|, |n|, 1e-12).
template <class LossFn>
GradCheckResult finite_diff_check(LossFn&& loss, const ParamViews& params, const ConstParamViews& analytic,
                                  double step = 1e-5) {
  detail::check_shapes(params, analytic);
  require(step > 0.0, "invalid_config", "finite-difference step must be positive");
  const double first = loss();
  const double second = loss();
  if (!(first == second) && !(std::isnan(first) && std::isnan(second)))
    throw Error("nondeterministic_closure",
                "loss closure returned different values for identical parameters; freeze random noise");

  GradCheckResult result;
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      double& p = params[b][i];
      const double saved = p;
      p = saved + step;
      const double plus = loss();
      p = saved - step;
      const double minus = loss();
      p = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[b][i];
      const double scale = std::max({std::abs(a), std::abs(numeric), 1e-12});
      const double err = std::abs(a - numeric) / scale;
      ++result.checked;
      if (err > result.max_relative_error || std::isnan(err)) {
        result.max_relative_error = std::isnan(err) ? std::numeric_limits<double>::infinity() : err;
        result.worst_block = b;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace optdist
