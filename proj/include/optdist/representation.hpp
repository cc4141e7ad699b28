#pragma once

// Shared representation: per-feature embedding tables, concatenation with
// the normalized continuous features, and the shared bottom MLP.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "optdist/data.hpp"
#include "optdist/diffcore.hpp"

namespace optdist {

/// Mini-batches are views of pointers into an encoded dataset.
using BatchView = std::span<const EncodedExample* const>;

inline std::vector<const EncodedExample*> as_batch(std::span<const EncodedExample> data) {
  std::vector<const EncodedExample*> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(&ex);
  return out;
}

/// Input geometry the model is built for.
struct FeatureLayout {
  std::vector<FeatureKind> order;         // schema order
  std::vector<std::size_t> vocab_sizes;   // per categorical feature, including the unknown row
  std::size_t embedding_dim = 5;

  std::size_t num_categorical() const { return vocab_sizes.size(); }
  std::size_t num_continuous() const { return order.size() - vocab_sizes.size(); }
  std::size_t concat_width() const { return num_categorical() * embedding_dim + num_continuous(); }

  static FeatureLayout from(const FeatureSchema& schema, const std::vector<Vocabulary>& vocabs,
                            std::size_t embedding_dim) {
    FeatureLayout layout;
    for (const auto& f : schema.features) layout.order.push_back(f.kind);
    for (const auto& v : vocabs) layout.vocab_sizes.push_back(v.size());
    layout.embedding_dim = embedding_dim;
    require(layout.vocab_sizes.size() == schema.num_categorical(), "dimension_mismatch",
            "one vocabulary per categorical feature is required");
    return layout;
  }
};

struct EmbeddingTables {
  std::vector<Matrix> tables;  // vocab_size x embedding_dim each

  static EmbeddingTables init(const FeatureLayout& layout, std::uint64_t seed) {
    EmbeddingTables t;
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(layout.embedding_dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (std::size_t vocab : layout.vocab_sizes) {
      Matrix m(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(layout.embedding_dim));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
      t.tables.push_back(std::move(m));
    }
    return t;
  }

  EmbeddingTables zeros_like() const {
    EmbeddingTables z;
    for (const auto& m : tables) z.tables.push_back(Matrix::Zero(m.rows(), m.cols()));
    return z;
  }

  void collect_parameters(ParamViews& out) {
    for (auto& m : tables) out.emplace_back(m.data(), static_cast<std::size_t>(m.size()));
  }
};

/// h = [e_1, ..., e_m] per example, one row per example, in schema order.
inline Matrix embed_concat(BatchView batch, const FeatureLayout& layout, const EmbeddingTables& tables) {
  const auto dim = static_cast<Eigen::Index>(layout.embedding_dim);
  Matrix h(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(layout.concat_width()));
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const EncodedExample& ex = *batch[r];
    require(ex.categorical.size() == layout.num_categorical() && ex.continuous.size() == layout.num_continuous(),
            "dimension_mismatch", "example does not match the model's feature layout");
    Eigen::Index col = 0;
    std::size_t ci = 0, ni = 0;
    for (FeatureKind kind : layout.order) {
      if (kind == FeatureKind::categorical) {
        const int idx = ex.categorical[ci];
        const Matrix& table = tables.tables[ci];
        require(idx >= 0 && idx < table.rows(), "index_out_of_bounds",
                "categorical index " + std::to_string(idx) + " outside table of " + std::to_string(table.rows()) +
                    " rows");
        h.block(static_cast<Eigen::Index>(r), col, 1, dim) = table.row(idx);
        col += dim;
        ++ci;
      } else {
        h(static_cast<Eigen::Index>(r), col++) = ex.continuous[ni++];
      }
    }
  }
  return h;
}

/// Scatter dL/dh back into the embedding rows touched by the batch.
inline void embed_backward(BatchView batch, const FeatureLayout& layout, const Matrix& d_h, EmbeddingTables& grads) {
  const auto dim = static_cast<Eigen::Index>(layout.embedding_dim);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const EncodedExample& ex = *batch[r];
    Eigen::Index col = 0;
    std::size_t ci = 0;
    for (FeatureKind kind : layout.order) {
      if (kind == FeatureKind::categorical) {
        grads.tables[ci].row(ex.categorical[ci]) += d_h.block(static_cast<Eigen::Index>(r), col, 1, dim);
        col += dim;
        ++ci;
      } else {
        ++col;
      }
    }
  }
}

struct RepresentationTape {
  MlpTape bottom;
};

/// Embedding tables plus the shared bottom; an empty bottom passes h through.
struct Representation {
  FeatureLayout layout;
  EmbeddingTables tables;
  Mlp bottom;

  static Representation init(const FeatureLayout& layout, const std::vector<std::size_t>& bottom_layers,
                             Activation hidden, std::uint64_t seed) {
    Representation rep;
    rep.layout = layout;
    rep.tables = EmbeddingTables::init(layout, seed);
    if (!bottom_layers.empty()) {
      MlpSpec spec;
      spec.layer_sizes.push_back(layout.concat_width());
      spec.layer_sizes.insert(spec.layer_sizes.end(), bottom_layers.begin(), bottom_layers.end());
      spec.hidden_activation = hidden;
      spec.output_activation = hidden;
      spec.seed = seed + 1;
      rep.bottom = Mlp::init(spec);
    }
    return rep;
  }

  std::size_t output_width() const { return bottom.empty() ? layout.concat_width() : bottom.output_size(); }

  /// h_u for every example of the batch.
  Matrix forward(BatchView batch, RepresentationTape* tape = nullptr) const {
    return bottom.forward(embed_concat(batch, layout, tables), tape ? &tape->bottom : nullptr);
  }

  void backward(BatchView batch, const RepresentationTape& tape, const Matrix& d_hu, Representation& grads) const {
    const Matrix d_h = bottom.backward(tape.bottom, d_hu, grads.bottom);
    embed_backward(batch, layout, d_h, grads.tables);
  }

  Representation zeros_like() const { return {layout, tables.zeros_like(), bottom.zeros_like()}; }

  void collect_parameters(ParamViews& out) {
    tables.collect_parameters(out);
    bottom.collect_parameters(out);
  }
};

}  // namespace optdist
