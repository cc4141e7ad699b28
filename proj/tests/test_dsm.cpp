#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "optdist/dsm.hpp"

using namespace optdist;

TEST(SelectionProbs, Softmax) {
  const std::vector<double> equal{0.3, 0.3, 0.3, 0.3};
  for (double a : softmax(equal)) EXPECT_DOUBLE_EQ(a, 0.25);
  const std::vector<double> x{1, 2, 0.5}, shifted{101, 102, 100.5};
  const auto a = softmax(x), b = softmax(shifted);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  const std::vector<double> two{0.0, std::log(3.0)};
  const auto c = softmax(two);
  EXPECT_NEAR(c[0], 0.25, 1e-15);
  EXPECT_NEAR(c[1], 0.75, 1e-15);
  const std::vector<double> extreme{-1000, 1000};
  const auto d = softmax(extreme);
  EXPECT_TRUE(std::isfinite(d[0]));
  EXPECT_EQ(d[1], 1.0);
}

TEST(SelectionProbs, FromSelectorMlp) {
  MlpSpec spec{{3, 4, 5}, Activation::relu, Activation::identity, 2};
  const Mlp sel = Mlp::init(spec);
  const std::vector<double> hu{0.2, 0.1, -0.4};
  const auto alpha = selection_probs(sel, hu);
  ASSERT_EQ(alpha.size(), 5u);
  double s = 0;
  for (double a : alpha) {
    EXPECT_GT(a, 0.0);
    EXPECT_LT(a, 1.0);
    s += a;
  }
  EXPECT_NEAR(s, 1.0, 1e-12);
  const std::vector<double> wrong{1.0};
  EXPECT_THROW(selection_probs(sel, wrong), Error);
}

TEST(SampleGumbel, Substitution) {
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-1.0)), 0.0, 1e-15);
  EXPECT_NEAR(gumbel_from_uniform(std::exp(-std::numbers::e)), -1.0, 1e-14);
}

TEST(SampleGumbel, MonteCarloMean) {
  std::mt19937_64 rng(77);
  const std::size_t n = 1'000'000;
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = sample_gumbel(rng);
    ASSERT_TRUE(std::isfinite(g));
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, std::numbers::egamma, 3.0 * std::sqrt(var / n));
  EXPECT_NEAR(var, std::numbers::pi * std::numbers::pi / 6.0, 0.02);
}

TEST(GumbelSoftmax, UniformAlphaZeroNoiseTiesToFirst) {
  const std::vector<double> alpha(3, 1.0 / 3), g(3, 0.0);
  const auto s = gumbel_softmax_st(alpha, g, 1.0);
  for (double p : s.soft) EXPECT_NEAR(p, 1.0 / 3, 1e-15);
  EXPECT_EQ(s.chosen, 0u);
  EXPECT_EQ(s.mask, (std::vector<double>{1, 0, 0}));
}

TEST(GumbelSoftmax, LowTemperatureClosedForm) {
  const std::vector<double> alpha{0.9, 0.1}, g{0, 0};
  const auto s = gumbel_softmax_st(alpha, g, 0.1);
  const double want = std::pow(0.9, 10) / (std::pow(0.9, 10) + std::pow(0.1, 10));
  EXPECT_NEAR(s.soft[0], want, 1e-15);
  EXPECT_NEAR(1.0 - s.soft[0], 2.87e-10, 0.01e-10);
  EXPECT_EQ(s.mask, (std::vector<double>{1, 0}));
}

TEST(GumbelSoftmax, DecreasingTemperatureSharpens) {
  const std::vector<double> alpha{0.2, 0.5, 0.3}, g{0.4, -0.1, 0.2};
  double prev = 0;
  for (double tau : {5.0, 2.0, 1.0, 0.5, 0.2, 0.1}) {
    const auto s = gumbel_softmax_st(alpha, g, tau);
    const double m = *std::max_element(s.soft.begin(), s.soft.end());
    EXPECT_GT(m, prev);
    prev = m;
  }
}

TEST(GumbelSoftmax, Invariants) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> raw(4);
    for (double& v : raw) v = u(rng);
    double total = 0;
    for (double v : raw) total += v;
    std::vector<double> alpha = raw;
    for (double& v : alpha) v /= total;
    const auto g = sample_gumbel(4, rng);
    const auto s = gumbel_softmax_st(alpha, g, 0.7);
    double sum = 0;
    for (double p : s.soft) sum += p;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_EQ(std::count(s.mask.begin(), s.mask.end(), 1.0), 1);
    EXPECT_EQ(s.mask[s.chosen], 1.0);
    EXPECT_EQ(s.chosen, argmax_index(s.soft));
    // rescaling alpha by a constant is absorbed by the softmax
    const auto r = gumbel_softmax_st(raw, g, 0.7);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(r.soft[i], s.soft[i], 1e-12);
  }
}

TEST(GumbelSoftmax, NonPositiveTemperatureRejected) {
  const std::vector<double> alpha{0.5, 0.5}, g{0, 0};
  EXPECT_THROW(gumbel_softmax_st(alpha, g, 0.0), Error);
  EXPECT_THROW(gumbel_softmax_st(alpha, g, -1.0), Error);
}

TEST(GumbelSoftmax, BackwardMatchesSoftPathFiniteDifferences) {
  const std::vector<double> alpha{0.2, 0.5, 0.3}, g{0.1, -0.4, 0.7}, q{1.3, 0.2, 2.1};
  const double tau = 0.8;
  const auto sel = gumbel_softmax_st(alpha, g, tau);
  const auto d_alpha = gumbel_softmax_backward(sel, q, tau);
  auto surrogate = [&](std::vector<double> a) {
    const auto s = gumbel_softmax_st(a, g, tau);
    double l = 0;
    for (std::size_t i = 0; i < 3; ++i) l += s.soft[i] * q[i];
    return l;
  };
  for (std::size_t i = 0; i < 3; ++i) {
    auto ap = alpha, am = alpha;
    ap[i] += 1e-6;
    am[i] -= 1e-6;
    EXPECT_NEAR(d_alpha[i], (surrogate(ap) - surrogate(am)) / 2e-6, 1e-7);
  }
}

TEST(GumbelSoftmax, ZeroNoiseLowTemperatureMatchesInference) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> logits(5);
    for (double& v : logits) v = std::log(u(rng));
    const auto alpha = softmax(logits);
    const std::vector<double> g(5, 0.0);
    EXPECT_EQ(gumbel_softmax_st(alpha, g, 1e-3).chosen, select_distribution(alpha));
  }
}

TEST(SelectDistribution, ArgmaxWithTies) {
  const std::vector<double> a{0.2, 0.5, 0.3}, b{0.5, 0.5};
  EXPECT_EQ(select_distribution(a), 1u);
  EXPECT_EQ(select_distribution(b), 0u);
  std::vector<double> logits{0.3, -1.0, 2.2, 1.9};
  const auto s = select_distribution(softmax(logits));
  for (double& v : logits) v = std::exp(3 * v) + 1;
  EXPECT_EQ(argmax_index(logits), s);
}
