#include <gtest/gtest.h>

#include "optdist/representation.hpp"

using namespace optdist;

namespace {

FeatureLayout layout_2cat_1cont(std::size_t dim = 3) {
  FeatureLayout l;
  l.order = {FeatureKind::categorical, FeatureKind::continuous, FeatureKind::categorical};
  l.vocab_sizes = {4, 5};
  l.embedding_dim = dim;
  return l;
}

}  // namespace

TEST(EmbedConcat, Width) {
  const auto layout = layout_2cat_1cont();
  EXPECT_EQ(layout.concat_width(), 7u);
  const auto tables = EmbeddingTables::init(layout, 1);
  const std::vector<EncodedExample> ex{{{1, 2}, {0.5}, 0, 0}};
  const auto batch = as_batch(ex);
  EXPECT_EQ(embed_concat(batch, layout, tables).cols(), 7);
}

TEST(EmbedConcat, SchemaOrderAndZeroTables) {
  const auto layout = layout_2cat_1cont(2);
  auto tables = EmbeddingTables::init(layout, 1);
  for (auto& t : tables.tables) t.setZero();
  tables.tables[1](3, 0) = 7.0;
  tables.tables[1](3, 1) = 8.0;
  const std::vector<EncodedExample> ex{{{1, 3}, {-1.25}, 0, 0}};
  const auto batch = as_batch(ex);
  const Matrix h = embed_concat(batch, layout, tables);
  ASSERT_EQ(h.cols(), 5);
  EXPECT_EQ(h(0, 0), 0.0);
  EXPECT_EQ(h(0, 1), 0.0);
  EXPECT_EQ(h(0, 2), -1.25);
  EXPECT_EQ(h(0, 3), 7.0);
  EXPECT_EQ(h(0, 4), 8.0);
}

TEST(EmbedConcat, IndexOutOfBounds) {
  const auto layout = layout_2cat_1cont();
  const auto tables = EmbeddingTables::init(layout, 1);
  const std::vector<EncodedExample> ex{{{4, 0}, {0.0}, 0, 0}};
  const auto batch = as_batch(ex);
  EXPECT_THROW(embed_concat(batch, layout, tables), Error);
}

TEST(SharedBottom, IdentityBottomPassesThrough) {
  const auto layout = layout_2cat_1cont();
  const auto rep = Representation::init(layout, {}, Activation::relu, 3);
  const std::vector<EncodedExample> ex{{{1, 2}, {0.5}, 0, 0}};
  const auto batch = as_batch(ex);
  EXPECT_EQ(rep.forward(batch), embed_concat(batch, layout, rep.tables));
  EXPECT_EQ(rep.output_width(), 7u);
}

TEST(SharedBottom, IdenticalExamplesIdenticalOutput) {
  const auto rep = Representation::init(layout_2cat_1cont(), {8}, Activation::relu, 3);
  const std::vector<EncodedExample> ex(3, EncodedExample{{2, 4}, {0.1}, 0, 0});
  const auto batch = as_batch(ex);
  const Matrix hu = rep.forward(batch);
  EXPECT_EQ(hu.row(0), hu.row(1));
  EXPECT_EQ(hu.row(0), hu.row(2));
}

TEST(SharedBottom, GradientReachesOnlyTouchedRows) {
  const auto layout = layout_2cat_1cont();
  Representation rep = Representation::init(layout, {6}, Activation::softplus, 3);
  const std::vector<EncodedExample> ex{{{1, 2}, {0.3}, 0, 0}, {{3, 2}, {-0.7}, 0, 0}};
  const auto batch = as_batch(ex);
  Matrix w(2, 6);
  w.setConstant(0.5);
  w(1, 3) = -1.0;
  RepresentationTape tape;
  rep.forward(batch, &tape);
  Representation grads = rep.zeros_like();
  rep.backward(batch, tape, w, grads);

  for (Eigen::Index r = 0; r < 4; ++r) {
    const bool touched = r == 1 || r == 3;
    EXPECT_EQ(grads.tables.tables[0].row(r).isZero(0.0), !touched) << "table 0 row " << r;
  }
  for (Eigen::Index r = 0; r < 5; ++r)
    EXPECT_EQ(grads.tables.tables[1].row(r).isZero(0.0), r != 2) << "table 1 row " << r;

  auto loss = [&] { return (rep.forward(batch).array() * w.array()).sum(); };
  ParamViews p, g;
  rep.collect_parameters(p);
  grads.collect_parameters(g);
  EXPECT_LT(finite_diff_check(loss, p, const_views(g), 1e-6).max_relative_error, 1e-6);
}

TEST(SharedBottom, PermutedSchemaPermutesConcatenation) {
  FeatureLayout a;
  a.order = {FeatureKind::categorical, FeatureKind::continuous};
  a.vocab_sizes = {3};
  a.embedding_dim = 2;
  FeatureLayout b = a;
  b.order = {FeatureKind::continuous, FeatureKind::categorical};
  const auto tables = EmbeddingTables::init(a, 4);
  const std::vector<EncodedExample> ex{{{2}, {9.0}, 0, 0}};
  const auto batch = as_batch(ex);
  const Matrix ha = embed_concat(batch, a, tables);
  const Matrix hb = embed_concat(batch, b, tables);
  EXPECT_EQ(ha(0, 0), hb(0, 1));
  EXPECT_EQ(ha(0, 1), hb(0, 2));
  EXPECT_EQ(ha(0, 2), hb(0, 0));
}
