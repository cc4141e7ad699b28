#pragma once

// MAE, normalized Gini, Spearman's rho (overall and positives-only) and
// selection purity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "optdist/model.hpp"

namespace optdist {

inline double mae(std::span<const double> predictions, std::span<const double> labels) {
  require(predictions.size() == labels.size(), "dimension_mismatch", "predictions and labels differ in length");
  require(!predictions.empty(), "empty_dataset", "MAE of an empty set");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) sum += std::abs(predictions[i] - labels[i]);
  return sum / static_cast<double>(labels.size());
}

namespace detail {

/// Unnormalized Gini of `labels` ordered by `key` descending; ties in `key`
/// keep the original order.
inline std::optional<double> raw_gini(std::span<const double> key, std::span<const double> labels) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  const double total = std::accumulate(labels.begin(), labels.end(), 0.0);
  if (!(total > 0.0)) return std::nullopt;
  double running = 0.0, area = 0.0;
  for (std::size_t i : order) {
    running += labels[i];
    area += running / total;
  }
  const double nd = static_cast<double>(n);
  return (area - (nd + 1.0) / 2.0) / nd;
}

}  // namespace detail

/// Gini of the prediction ordering divided by the Gini of the perfect
/// ordering. Not symmetric: the first argument ranks, the second is summed.
/// Undefined (nullopt) when labels are all equal.
inline std::optional<double> norm_gini(std::span<const double> predictions, std::span<const double> labels) {
  require(predictions.size() == labels.size(), "dimension_mismatch", "predictions and labels differ in length");
  if (labels.size() < 2) return std::nullopt;
  const auto perfect = detail::raw_gini(labels, labels);
  if (!perfect || *perfect == 0.0) return std::nullopt;
  const auto model = detail::raw_gini(predictions, labels);
  return *model / *perfect;
}

/// Fractional (tie-averaged) 1-based ranks.
inline std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline std::optional<double> spearman_rho(std::span<const double> predictions, std::span<const double> labels) {
  require(predictions.size() == labels.size(), "dimension_mismatch", "predictions and labels differ in length");
  if (labels.size() < 2) return std::nullopt;
  const auto rp = average_ranks(predictions);
  const auto rl = average_ranks(labels);
  return pearson(rp, rl);
}

struct MetricsReport {
  double mae = 0.0;
  std::optional<double> norm_gini;
  std::optional<double> spearman_rho;
  std::optional<double> norm_gini_pos;
  std::optional<double> spearman_rho_pos;
  std::size_t n = 0;
  std::size_t n_pos = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline MetricsReport metrics_report(std::span<const double> predictions, std::span<const double> labels) {
  MetricsReport r;
  r.n = labels.size();
  r.mae = mae(predictions, labels);
  r.norm_gini = norm_gini(predictions, labels);
  r.spearman_rho = spearman_rho(predictions, labels);
  std::vector<double> pp, pl;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 0.0) {
      pp.push_back(predictions[i]);
      pl.push_back(labels[i]);
    }
  }
  r.n_pos = pl.size();
  if (r.n_pos >= 2) {
    r.norm_gini_pos = norm_gini(pp, pl);
    r.spearman_rho_pos = spearman_rho(pp, pl);
  }
  return r;
}

struct Evaluation {
  MetricsReport report;
  Prediction prediction;
};

/// Runs the model's inference path over `data` and scores it.
inline Evaluation evaluate_detailed(const Model& model, std::span<const EncodedExample> data) {
  Evaluation ev;
  ev.prediction = predict(model, data);
  std::vector<double> labels;
  labels.reserve(data.size());
  for (const auto& ex : data) labels.push_back(ex.label);
  ev.report = metrics_report(ev.prediction.value, labels);
  return ev;
}

inline MetricsReport evaluate(const Model& model, std::span<const EncodedExample> data) {
  return evaluate_detailed(model, data).report;
}

/// For every assigned SDN, count its most frequent hidden cluster; purity is
/// the fraction of examples covered by those majorities.
inline double selection_purity(std::span<const std::size_t> assignments, std::span<const int> clusters) {
  require(assignments.size() == clusters.size(), "dimension_mismatch", "assignments and clusters differ in length");
  require(!assignments.empty(), "empty_dataset", "purity of an empty set");
  std::map<std::size_t, std::map<int, std::size_t>> table;
  for (std::size_t i = 0; i < assignments.size(); ++i) ++table[assignments[i]][clusters[i]];
  std::size_t covered = 0;
  for (const auto& [sdn, counts] : table) {
    std::size_t best = 0;
    for (const auto& [cluster, c] : counts) best = std::max(best, c);
    covered += best;
  }
  return static_cast<double>(covered) / static_cast<double>(assignments.size());
}

}  // namespace optdist
