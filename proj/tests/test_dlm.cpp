#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "optdist/dlm.hpp"

using namespace optdist;

namespace {

double lognormal_density(double y, double mu, double sigma) {
  const double z = (std::log(y) - mu) / sigma;
  return std::exp(-0.5 * z * z) / (y * sigma * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST(SdnForward, ZeroLogits) {
  const auto p = ziln_from_logits(0, 0, 0);
  EXPECT_DOUBLE_EQ(p.p, 0.5);
  EXPECT_DOUBLE_EQ(p.mu, 0.0);
  EXPECT_NEAR(p.sigma, std::log(2.0) + 1e-6, 1e-15);
}

TEST(SdnForward, DistinctSeedsAndRange) {
  const Dlm dlm = Dlm::init(4, {8, 6}, 2, Activation::relu, 5);
  const std::vector<double> hu{0.3, -1.0, 0.7, 2.0};
  const auto a = dlm.sdn_forward(hu, 0);
  const auto b = dlm.sdn_forward(hu, 1);
  EXPECT_NE(a.mu, b.mu);
  EXPECT_THROW(dlm.sdn_forward(hu, 2), Error);
  for (double logit : {-30.0, -1.0, 0.0, 5.0, 30.0}) {
    const double p = ziln_from_logits(logit, 0, 0).p;
    EXPECT_GT(p, 0.0);
    EXPECT_LE(p, 1.0);
  }
  EXPECT_LT(ziln_from_logits(20.0, 0, 0).p, 1.0);
}

TEST(ZilnNll, ClosedForms) {
  EXPECT_NEAR(ziln_nll({0.5, 0.0, 1.0}, 0.0, 0), 0.693147180559945, 1e-9);
  EXPECT_NEAR(ziln_nll({0.5, 0.0, 1.0}, 1.0, 1), std::log(2.0) + 0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
  // ln 2 + ln(2*pi)/2 = 1.6120857
  EXPECT_NEAR(ziln_nll({0.5, 0.0, 1.0}, 1.0, 1), 1.6120857, 1e-7);
}

TEST(ZilnNll, Errors) {
  EXPECT_THROW(ziln_nll({0.5, 0.0, 1.0}, 0.0, 1), Error);
  EXPECT_THROW(ziln_nll({0.5, 0.0, 1.0}, -2.0, 1), Error);
  EXPECT_THROW(ziln_nll({0.5, 0.0, 1.0}, 1.0, 2), Error);
}

TEST(ZilnNll, MuGradientByFiniteDifferences) {
  auto at = [](double mu) { return ziln_nll({0.5, mu, 1.0}, 1.0, 1); };
  const double h = 1e-6;
  EXPECT_NEAR((at(h) - at(-h)) / (2 * h), 0.0, 1e-8);
  EXPECT_NEAR((at(1 + h) - at(1 - h)) / (2 * h), 1.0, 1e-8);
  EXPECT_DOUBLE_EQ(ziln_nll_from_logits(0, 0, 0, 1.0, 1).d_mu, 0.0);
}

TEST(ZilnNll, EqualsNegativeLogDensity) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 0.99), m(-2, 4), s(0.2, 3), y(0.01, 50);
  for (int i = 0; i < 1000; ++i) {
    const ZilnParams p{u(rng), m(rng), s(rng)};
    const double yy = y(rng);
    EXPECT_NEAR(ziln_nll(p, yy, 1), -std::log(p.p * lognormal_density(yy, p.mu, p.sigma)), 1e-12);
    EXPECT_NEAR(ziln_nll(p, 0.0, 0), -std::log(1.0 - p.p), 1e-12);
  }
}

TEST(ZilnNll, ConvexInMu) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> m(-5, 5), s(0.2, 3), y(0.01, 50);
  for (int i = 0; i < 1000; ++i) {
    const double sigma = s(rng), yy = y(rng), a = m(rng), b = m(rng);
    const double mid = ziln_nll({0.3, 0.5 * (a + b), sigma}, yy, 1);
    const double avg = 0.5 * (ziln_nll({0.3, a, sigma}, yy, 1) + ziln_nll({0.3, b, sigma}, yy, 1));
    EXPECT_LE(mid, avg + 1e-12);
  }
}

TEST(ZilnNll, LogitFormMatchesDirectAndGradient) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0, 1.5);
  std::uniform_real_distribution<double> y(0.05, 20);
  for (int i = 0; i < 300; ++i) {
    const double a = n(rng), b = n(rng), c = n(rng), yy = y(rng);
    for (int conv : {0, 1}) {
      const double label = conv ? yy : 0.0;
      const auto r = ziln_nll_from_logits(a, b, c, label, conv);
      EXPECT_NEAR(r.loss, ziln_nll(ziln_from_logits(a, b, c), label, conv), 1e-10);
      const double h = 1e-6;
      auto f = [&](double da, double db, double dc) {
        return ziln_nll_from_logits(a + da, b + db, c + dc, label, conv).loss;
      };
      EXPECT_NEAR(r.d_logit_p, (f(h, 0, 0) - f(-h, 0, 0)) / (2 * h), 1e-6);
      EXPECT_NEAR(r.d_mu, (f(0, h, 0) - f(0, -h, 0)) / (2 * h), 1e-6 * std::max(1.0, std::abs(r.d_mu)));
      EXPECT_NEAR(r.d_logit_sigma, (f(0, 0, h) - f(0, 0, -h)) / (2 * h),
                  1e-6 * std::max(1.0, std::abs(r.d_logit_sigma)));
    }
  }
}

TEST(DlmLosses, SingleSdnMatchesDirectLoss) {
  const Dlm dlm = Dlm::init(3, {5}, 1, Activation::relu, 2);
  const std::vector<double> hu{0.1, 0.2, -0.3};
  const auto out = dlm_losses(dlm, hu, 2.5, 1);
  ASSERT_EQ(out.losses.size(), 1u);
  EXPECT_NEAR(out.losses[0], ziln_nll(dlm.sdn_forward(hu, 0), 2.5, 1), 1e-12);
}

TEST(DlmLosses, ClonedSdnsGiveIdenticalEntries) {
  Dlm dlm = Dlm::init(3, {5}, 2, Activation::relu, 2);
  dlm.sdns[1] = dlm.sdns[0];
  const std::vector<double> hu{0.1, 0.2, -0.3};
  const auto out = dlm_losses(dlm, hu, 0.0, 0);
  EXPECT_EQ(out.losses[0], out.losses[1]);
}

TEST(DlmLosses, EntriesMatchIsolatedRecomputation) {
  const Dlm dlm = Dlm::init(3, {5, 4}, 4, Activation::relu, 12);
  const std::vector<double> hu{0.5, -0.2, 1.3};
  const auto out = dlm_losses(dlm, hu, 3.0, 1);
  for (std::size_t i = 0; i < 4; ++i) {
    Dlm alone;
    alone.sdns = {dlm.sdns[i]};
    EXPECT_EQ(out.losses[i], dlm_losses(alone, hu, 3.0, 1).losses[0]);
  }
}

TEST(DlmLosses, PerturbingOneSdnLeavesOthersBitUnchanged) {
  Dlm dlm = Dlm::init(3, {5}, 3, Activation::relu, 12);
  const std::vector<double> hu{0.5, -0.2, 1.3};
  const auto before = dlm_losses(dlm, hu, 3.0, 1).losses;
  dlm.sdns[1].layers()[0].weights.array() += 0.25;
  const auto after = dlm_losses(dlm, hu, 3.0, 1).losses;
  EXPECT_EQ(before[0], after[0]);
  EXPECT_EQ(before[2], after[2]);
  EXPECT_NE(before[1], after[1]);
}

TEST(ZilnExpectation, ClosedForms) {
  EXPECT_NEAR(ziln_expectation({1.0, 0.0, kSigmaFloor}), 1.0, 1e-9);
  EXPECT_NEAR(ziln_expectation({0.5, 0.0, 2.0}), 0.5 * std::exp(2.0), 1e-12);
  EXPECT_NEAR(ziln_expectation({0.5, 0.0, 2.0}), 3.694528, 1e-6);
  EXPECT_NEAR(ziln_expectation({0.1, std::log(10.0), kSigmaFloor}), 1.0, 1e-9);
  EXPECT_GT(ziln_expectation({1e-6, -20.0, 0.1}), 0.0);
}

TEST(ZilnExpectation, OverflowClamped) {
  const auto e = ziln_expectation_checked({0.5, 800.0, 1.0});
  EXPECT_TRUE(e.clamped);
  EXPECT_EQ(e.value, std::numeric_limits<double>::max());
  EXPECT_FALSE(ziln_expectation_checked({0.5, 1.0, 1.0}).clamped);
}
