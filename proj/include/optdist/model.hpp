#pragma once

// Model assembly (OptDist and the ZILN / two-stage / MTL-MSE baselines),
// the batch training objective with its analytic gradient, and inference.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "optdist/alignment.hpp"
#include "optdist/dlm.hpp"
#include "optdist/dsm.hpp"
#include "optdist/representation.hpp"

namespace optdist {

enum class ModelKind { optdist, ziln, two_stage, mtl_mse };
enum class OptimizerKind { adam, sgd };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::optdist: return "optdist";
    case ModelKind::ziln: return "ziln";
    case ModelKind::two_stage: return "two_stage";
    case ModelKind::mtl_mse: return "mtl_mse";
  }
  return "optdist";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "optdist") return ModelKind::optdist;
  if (s == "ziln") return ModelKind::ziln;
  if (s == "two_stage") return ModelKind::two_stage;
  if (s == "mtl_mse") return ModelKind::mtl_mse;
  throw Error("invalid_config", "unknown model kind '" + std::string(s) + "'");
}

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw Error("invalid_config", "unknown optimizer '" + std::string(s) + "'");
}

struct TrainConfig {
  ModelKind kind = ModelKind::optdist;
  std::size_t num_distributions = 4;
  double temperature = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  std::uint64_t seed = 0;
  std::size_t embedding_dim = 5;
  std::vector<std::size_t> bottom_layers{64};
  std::vector<std::size_t> tower_layers{64, 32, 32};
  std::vector<std::size_t> selector_layers{64, 32};
  Activation hidden_activation = Activation::relu;
  AblationFlags ablation;
  /// Forward weights of the DLM loss: hard one-hot mask (straight-through) or
  /// the relaxed Gumbel-softmax weights themselves.
  bool hard_selection = true;
  OptimizerKind optimizer = OptimizerKind::adam;

  /// Every violated constraint, not just the first.
  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (num_distributions < 1) out.emplace_back("num_distributions must be >= 1");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) out.emplace_back("temperature must be > 0");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) out.emplace_back("learning_rate must be > 0");
    if (batch_size < 1) out.emplace_back("batch_size must be >= 1");
    if (embedding_dim < 1) out.emplace_back("embedding_dim must be >= 1");
    for (auto* layers : {&bottom_layers, &tower_layers, &selector_layers})
      for (std::size_t s : *layers)
        if (s < 1) out.emplace_back("layer sizes must be >= 1");
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg;
    for (const auto& s : p) msg += (msg.empty() ? "" : "; ") + s;
    throw Error("invalid_config", msg);
  }

  /// Number of SDNs the built model carries.
  std::size_t distributions() const { return kind == ModelKind::optdist ? num_distributions : 1; }
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Seed of one network component; independent of which other components exist.
inline std::uint64_t component_seed(std::uint64_t seed, std::uint64_t component) {
  return detail::splitmix64(seed ^ detail::splitmix64(component));
}

enum Component : std::uint64_t {
  kRepresentationSeed = 1,
  kDlmSeed = 2,
  kSelectorSeed = 3,
  kConversionHeadSeed = 4,
  kValueHeadSeed = 5,
  kAuxRepresentationSeed = 6,
};

struct Model {
  TrainConfig config;
  Representation rep;      // shared representation (classifier side for two_stage)
  Representation aux_rep;  // two_stage regressor representation
  Dlm dlm;                 // optdist, ziln
  Mlp selector;            // optdist
  Mlp conversion_head;     // two_stage, mtl_mse
  Mlp value_head;          // two_stage, mtl_mse

  bool single_distribution() const { return dlm.size() == 1 && config.kind != ModelKind::optdist; }

  ParamViews parameters() {
    ParamViews out;
    rep.collect_parameters(out);
    aux_rep.collect_parameters(out);
    dlm.collect_parameters(out);
    selector.collect_parameters(out);
    conversion_head.collect_parameters(out);
    value_head.collect_parameters(out);
    return out;
  }

  ConstParamViews parameters() const { return const_views(const_cast<Model*>(this)->parameters()); }

  Model zeros_like() const {
    Model z;
    z.config = config;
    z.rep = rep.zeros_like();
    z.aux_rep = aux_rep.zeros_like();
    z.dlm = dlm.zeros_like();
    z.selector = selector.zeros_like();
    z.conversion_head = conversion_head.zeros_like();
    z.value_head = value_head.zeros_like();
    return z;
  }
};

namespace detail {
inline Mlp make_head(std::size_t input, const std::vector<std::size_t>& hidden, std::size_t outputs,
                     Activation act, std::uint64_t seed) {
  MlpSpec spec;
  spec.layer_sizes.push_back(input);
  spec.layer_sizes.insert(spec.layer_sizes.end(), hidden.begin(), hidden.end());
  spec.layer_sizes.push_back(outputs);
  spec.hidden_activation = act;
  spec.output_activation = Activation::identity;
  spec.seed = seed;
  return Mlp::init(spec);
}
}  // namespace detail

inline Model build_model(const TrainConfig& config, FeatureLayout layout) {
  config.validate();
  layout.embedding_dim = config.embedding_dim;
  require(!layout.order.empty(), "invalid_config", "model needs at least one input feature");
  Model m;
  m.config = config;
  const Activation act = config.hidden_activation;
  m.rep = Representation::init(layout, config.bottom_layers, act, component_seed(config.seed, kRepresentationSeed));
  const std::size_t width = m.rep.output_width();
  switch (config.kind) {
    case ModelKind::optdist:
      m.dlm = Dlm::init(width, config.tower_layers, config.num_distributions, act,
                        component_seed(config.seed, kDlmSeed));
      m.selector = detail::make_head(width, config.selector_layers, config.num_distributions, act,
                                     component_seed(config.seed, kSelectorSeed));
      break;
    case ModelKind::ziln:
      m.dlm = Dlm::init(width, config.tower_layers, 1, act, component_seed(config.seed, kDlmSeed));
      break;
    case ModelKind::two_stage:
      m.aux_rep = Representation::init(layout, config.bottom_layers, act,
                                       component_seed(config.seed, kAuxRepresentationSeed));
      m.conversion_head = detail::make_head(width, config.tower_layers, 1, act,
                                            component_seed(config.seed, kConversionHeadSeed));
      m.value_head = detail::make_head(m.aux_rep.output_width(), config.tower_layers, 1, act,
                                       component_seed(config.seed, kValueHeadSeed));
      break;
    case ModelKind::mtl_mse:
      m.conversion_head = detail::make_head(width, config.tower_layers, 1, act,
                                            component_seed(config.seed, kConversionHeadSeed));
      m.value_head = detail::make_head(width, config.tower_layers, 1, act,
                                       component_seed(config.seed, kValueHeadSeed));
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Objective

/// Per-example quantities that are constants w.r.t. the gradient. Captured
/// at the current parameters and replayed to evaluate the straight-through
/// surrogate sum_i (mask_i + pi_i - sg(pi_i)) Q_i under finite differences.
struct FrozenSelection {
  std::vector<std::vector<double>> mask;
  std::vector<std::vector<double>> soft;
  std::vector<std::vector<double>> hard_label;
  std::vector<std::vector<double>> soft_label;
};

struct ObjectiveOptions {
  const Matrix* noise = nullptr;  // batch x L Gumbel noise, required for optdist with Gumbel on
  Model* grads = nullptr;         // gradients of the batch-mean loss are accumulated here
  FrozenSelection* capture = nullptr;
  const FrozenSelection* frozen = nullptr;
  std::vector<std::size_t>* chosen = nullptr;  // training-time selected SDN per example
};

namespace detail {

inline std::vector<double> row(const Matrix& m, Eigen::Index r) {
  return std::vector<double>(m.row(r).data(), m.row(r).data() + m.cols());
}

inline LossBreakdown mixture_objective(const Model& model, BatchView batch, const ObjectiveOptions& opt) {
  const TrainConfig& cfg = model.config;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const std::size_t L = model.dlm.size();
  const bool is_optdist = cfg.kind == ModelKind::optdist;
  const bool use_gumbel = is_optdist && !cfg.ablation.no_gumbel;
  const bool use_ce = is_optdist && !cfg.ablation.no_ce;
  const bool use_kl = is_optdist && !cfg.ablation.no_kl;
  const bool stopgrad = !cfg.ablation.no_stopgrad;
  if (use_gumbel)
    require(opt.noise && opt.noise->rows() == n && opt.noise->cols() == static_cast<Eigen::Index>(L),
            "dimension_mismatch", "Gumbel noise must be batch x L");
  if (opt.frozen && is_optdist)
    require(opt.frozen->mask.size() == batch.size(), "dimension_mismatch", "frozen selection batch mismatch");

  RepresentationTape rep_tape;
  const Matrix hu = model.rep.forward(batch, &rep_tape);

  std::vector<MlpTape> sdn_tapes(L);
  std::vector<Matrix> head_logits(L);
  for (std::size_t i = 0; i < L; ++i) head_logits[i] = model.dlm.head_logits(hu, i, &sdn_tapes[i]);

  Matrix q(n, static_cast<Eigen::Index>(L));
  std::vector<std::vector<ZilnLossGrad>> q_grad(L, std::vector<ZilnLossGrad>(batch.size()));
  for (std::size_t i = 0; i < L; ++i) {
    for (Eigen::Index r = 0; r < n; ++r) {
      const auto& lg = head_logits[i];
      const auto g = ziln_nll_from_logits(lg(r, 0), lg(r, 1), lg(r, 2), batch[r]->label, batch[r]->converted);
      q(r, static_cast<Eigen::Index>(i)) = g.loss;
      q_grad[i][static_cast<std::size_t>(r)] = g;
    }
  }

  MlpTape sel_tape;
  Matrix sel_logits;
  if (is_optdist) sel_logits = model.selector.forward(hu, &sel_tape);

  Matrix d_q = Matrix::Zero(n, static_cast<Eigen::Index>(L));
  Matrix d_sel = Matrix::Zero(n, static_cast<Eigen::Index>(L));
  std::vector<ExampleLoss> losses(batch.size());
  if (opt.capture) *opt.capture = FrozenSelection{};
  if (opt.chosen) opt.chosen->assign(batch.size(), 0);

  for (Eigen::Index r = 0; r < n; ++r) {
    const auto ur = static_cast<std::size_t>(r);
    const std::vector<double> qr = row(q, r);
    ExampleLoss& ex = losses[ur];
    if (!is_optdist) {
      ex.weighted_nll = qr[0];
      d_q(r, 0) = 1.0;
      continue;
    }
    const std::vector<double> alpha = softmax(row(sel_logits, r));
    std::vector<double> d_alpha(L, 0.0);
    std::vector<double> d_qr(L, 0.0);

    if (use_gumbel) {
      const SelectionOutput sel = gumbel_softmax_st(alpha, row(*opt.noise, r), cfg.temperature);
      const std::vector<double>& mask =
          !cfg.hard_selection ? sel.soft : (opt.frozen ? opt.frozen->mask[ur] : sel.mask);
      const std::vector<double>& soft0 = opt.frozen ? opt.frozen->soft[ur] : sel.soft;
      std::vector<double> w(L);
      for (std::size_t i = 0; i < L; ++i)
        w[i] = cfg.hard_selection ? mask[i] + (sel.soft[i] - soft0[i]) : sel.soft[i];
      ex.weighted_nll = weighted_dlm_loss(w, qr);
      d_qr = w;
      const auto da = gumbel_softmax_backward(sel, qr, cfg.temperature);
      for (std::size_t i = 0; i < L; ++i) d_alpha[i] += da[i];
      if (opt.capture) {
        opt.capture->mask.push_back(sel.mask);
        opt.capture->soft.push_back(sel.soft);
      }
      if (opt.chosen) (*opt.chosen)[ur] = argmax_index(mask);
    } else {
      ex.weighted_nll = weighted_dlm_loss(alpha, qr);
      d_qr = alpha;
      for (std::size_t i = 0; i < L; ++i) d_alpha[i] += qr[i];
      if (opt.capture) {
        opt.capture->mask.push_back(alpha);
        opt.capture->soft.push_back(alpha);
      }
      if (opt.chosen) (*opt.chosen)[ur] = argmax_index(alpha);
    }

    const std::vector<double> hard = opt.frozen ? opt.frozen->hard_label[ur] : hard_pseudo_label(qr);
    const std::vector<double> omega =
        (opt.frozen && stopgrad) ? opt.frozen->soft_label[ur] : soft_pseudo_label(qr);
    if (opt.capture) {
      opt.capture->hard_label.push_back(hard);
      opt.capture->soft_label.push_back(omega);
    }
    if (use_ce) {
      ex.focal_ce = focal_ce(hard, alpha);
      const auto g = focal_ce_grad(hard, alpha);
      for (std::size_t i = 0; i < L; ++i) d_alpha[i] += g[i];
    }
    if (use_kl) {
      ex.kl = kl_loss(omega, alpha);
      const auto g = kl_loss_grad_alpha(omega, alpha);
      for (std::size_t i = 0; i < L; ++i) d_alpha[i] += g[i];
      if (!stopgrad) {
        const auto d_omega = kl_loss_grad_omega(omega, alpha);
        const auto d_neg_q = softmax_backward(omega, d_omega);
        for (std::size_t i = 0; i < L; ++i) d_qr[i] -= d_neg_q[i];
      }
    }
    for (std::size_t i = 0; i < L; ++i) d_q(r, static_cast<Eigen::Index>(i)) = d_qr[i];
    const auto d_logits = softmax_backward(alpha, d_alpha);
    for (std::size_t i = 0; i < L; ++i) d_sel(r, static_cast<Eigen::Index>(i)) = d_logits[i];
  }

  AblationFlags flags = cfg.ablation;
  if (!is_optdist) flags.no_ce = flags.no_kl = true;
  const LossBreakdown breakdown = total_loss(losses, flags);

  if (opt.grads) {
    Model& g = *opt.grads;
    const double scale = 1.0 / static_cast<double>(n);
    Matrix d_hu = Matrix::Zero(hu.rows(), hu.cols());
    for (std::size_t i = 0; i < L; ++i) {
      Matrix d_head(n, 3);
      for (Eigen::Index r = 0; r < n; ++r) {
        const double w = d_q(r, static_cast<Eigen::Index>(i)) * scale;
        const auto& qg = q_grad[i][static_cast<std::size_t>(r)];
        d_head(r, 0) = w * qg.d_logit_p;
        d_head(r, 1) = w * qg.d_mu;
        d_head(r, 2) = w * qg.d_logit_sigma;
      }
      d_hu += model.dlm.sdns[i].backward(sdn_tapes[i], d_head, g.dlm.sdns[i]);
    }
    if (is_optdist) d_hu += model.selector.backward(sel_tape, d_sel * scale, g.selector);
    model.rep.backward(batch, rep_tape, d_hu, g.rep);
  }
  return breakdown;
}

/// Binary cross-entropy from a logit: softplus(-z) if converted else softplus(z).
inline double bce_from_logit(double z, int converted) { return converted ? softplus(-z) : softplus(z); }

inline LossBreakdown two_stage_objective(const Model& model, BatchView batch, const ObjectiveOptions& opt) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  RepresentationTape cls_tape, reg_tape;
  MlpTape conv_tape, value_tape;
  const Matrix hc = model.rep.forward(batch, &cls_tape);
  const Matrix hr = model.aux_rep.forward(batch, &reg_tape);
  const Matrix z = model.conversion_head.forward(hc, &conv_tape);
  const Matrix r = model.value_head.forward(hr, &value_tape);

  Eigen::Index positives = 0;
  for (const auto* ex : batch) positives += ex->converted;
  double bce = 0.0, mse = 0.0;
  Matrix dz(n, 1), dr = Matrix::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = *batch[static_cast<std::size_t>(i)];
    bce += bce_from_logit(z(i, 0), ex.converted);
    dz(i, 0) = (sigmoid(z(i, 0)) - ex.converted) / static_cast<double>(n);
    if (ex.converted) {
      const double diff = r(i, 0) - std::log1p(ex.label);
      mse += diff * diff;
      dr(i, 0) = 2.0 * diff / static_cast<double>(positives);
    }
  }
  LossBreakdown out;
  out.weighted_nll = bce / static_cast<double>(n) + (positives > 0 ? mse / static_cast<double>(positives) : 0.0);
  out.total = out.weighted_nll;
  if (opt.grads) {
    Model& g = *opt.grads;
    model.rep.backward(batch, cls_tape, model.conversion_head.backward(conv_tape, dz, g.conversion_head), g.rep);
    model.aux_rep.backward(batch, reg_tape, model.value_head.backward(value_tape, dr, g.value_head), g.aux_rep);
  }
  return out;
}

inline LossBreakdown mtl_mse_objective(const Model& model, BatchView batch, const ObjectiveOptions& opt) {
  const auto n = static_cast<Eigen::Index>(batch.size());
  RepresentationTape rep_tape;
  MlpTape conv_tape, value_tape;
  const Matrix h = model.rep.forward(batch, &rep_tape);
  const Matrix z = model.conversion_head.forward(h, &conv_tape);
  const Matrix v = model.value_head.forward(h, &value_tape);
  double bce = 0.0, mse = 0.0;
  Matrix dz(n, 1), dv(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& ex = *batch[static_cast<std::size_t>(i)];
    bce += bce_from_logit(z(i, 0), ex.converted);
    dz(i, 0) = (sigmoid(z(i, 0)) - ex.converted) / static_cast<double>(n);
    const double diff = v(i, 0) - ex.label;
    mse += diff * diff;
    dv(i, 0) = 2.0 * diff / static_cast<double>(n);
  }
  LossBreakdown out;
  out.weighted_nll = (bce + mse) / static_cast<double>(n);
  out.total = out.weighted_nll;
  if (opt.grads) {
    Model& g = *opt.grads;
    Matrix d_h = model.conversion_head.backward(conv_tape, dz, g.conversion_head);
    d_h += model.value_head.backward(value_tape, dv, g.value_head);
    model.rep.backward(batch, rep_tape, d_h, g.rep);
  }
  return out;
}

}  // namespace detail

/// Batch-mean training loss; gradients (if requested) are of exactly this value,
/// with the straight-through and stop-gradient conventions applied.
inline LossBreakdown batch_objective(const Model& model, BatchView batch, const ObjectiveOptions& opt = {}) {
  require(!batch.empty(), "empty_dataset", "objective of an empty batch");
  switch (model.config.kind) {
    case ModelKind::optdist:
    case ModelKind::ziln: return detail::mixture_objective(model, batch, opt);
    case ModelKind::two_stage: return detail::two_stage_objective(model, batch, opt);
    case ModelKind::mtl_mse: return detail::mtl_mse_objective(model, batch, opt);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  std::vector<double> value;
  std::vector<std::size_t> chosen;  // selected SDN per example (0 for single-distribution models)
  std::size_t clamped = 0;          // predictions clamped after exp overflow
};

inline Prediction predict(const Model& model, BatchView batch) {
  Prediction out;
  if (batch.empty()) return out;
  const auto n = static_cast<Eigen::Index>(batch.size());
  out.value.resize(batch.size());
  out.chosen.assign(batch.size(), 0);
  switch (model.config.kind) {
    case ModelKind::optdist:
    case ModelKind::ziln: {
      const Matrix hu = model.rep.forward(batch);
      Matrix sel;
      if (model.config.kind == ModelKind::optdist) sel = model.selector.forward(hu);
      std::vector<Matrix> logits(model.dlm.size());
      for (std::size_t i = 0; i < model.dlm.size(); ++i) logits[i] = model.dlm.head_logits(hu, i);
      for (Eigen::Index r = 0; r < n; ++r) {
        std::size_t s = 0;
        if (model.config.kind == ModelKind::optdist) s = select_distribution(softmax(detail::row(sel, r)));
        const Matrix& lg = logits[s];
        const auto e = ziln_expectation_checked(ziln_from_logits(lg(r, 0), lg(r, 1), lg(r, 2)));
        out.value[static_cast<std::size_t>(r)] = e.value;
        out.chosen[static_cast<std::size_t>(r)] = s;
        out.clamped += e.clamped;
      }
      break;
    }
    case ModelKind::two_stage: {
      const Matrix z = model.conversion_head.forward(model.rep.forward(batch));
      const Matrix reg = model.value_head.forward(model.aux_rep.forward(batch));
      for (Eigen::Index r = 0; r < n; ++r)
        out.value[static_cast<std::size_t>(r)] = sigmoid(z(r, 0)) * std::max(std::expm1(reg(r, 0)), 0.0);
      break;
    }
    case ModelKind::mtl_mse: {
      const Matrix h = model.rep.forward(batch);
      const Matrix z = model.conversion_head.forward(h);
      const Matrix v = model.value_head.forward(h);
      for (Eigen::Index r = 0; r < n; ++r) out.value[static_cast<std::size_t>(r)] = sigmoid(z(r, 0)) * v(r, 0);
      break;
    }
  }
  return out;
}

inline Prediction predict(const Model& model, std::span<const EncodedExample> data) {
  const auto batch = as_batch(data);
  return predict(model, BatchView(batch));
}

}  // namespace optdist
