#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "cvflow/evaluation.hpp"

using namespace cvflow;

TEST(Metrics, IdentityIsZero) {
  const std::vector<double> a{1.0, 2.0, 3.5};
  const auto m = compute_metrics(a, a);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.mae, 0.0);
  ASSERT_TRUE(m.mape_pct.has_value());
  EXPECT_EQ(*m.mape_pct, 0.0);
  EXPECT_EQ(m.n, 3u);
}

TEST(Metrics, HandArithmeticWithZeroActuals) {
  const std::vector<double> a{0.0, 0.0}, p{3.0, 4.0};
  MetricOptions o;
  o.with_mape = false;
  const auto m = compute_metrics(a, p, o);
  EXPECT_NEAR(m.rmse, std::sqrt(12.5), 1e-12);
  EXPECT_NEAR(m.mae, 3.5, 1e-12);
  EXPECT_FALSE(m.mape_pct.has_value());
}

TEST(Metrics, MapeUndefinedListsOffenders) {
  const std::vector<double> a{0.0, 2.0, 0.0}, p{3.0, 4.0, 1.0};
  try {
    compute_metrics(a, p);
    FAIL() << "expected a metric error";
  } catch (const MetricError& e) {
    EXPECT_EQ(e.indices(), (std::vector<std::size_t>{0, 2}));
  }
}

TEST(Metrics, MapeHandCase) {
  const std::vector<double> a{10.0, 20.0}, p{9.0, 22.0};
  EXPECT_NEAR(*compute_metrics(a, p).mape_pct, 10.0, 1e-12);
}

TEST(Metrics, RootSumOverNRmse) {
  const std::vector<double> a{0.0, 0.0, 0.0, 0.0}, p{1.0, 1.0, 1.0, 1.0};
  MetricOptions o;
  o.with_mape = false;
  o.rmse_mode = RmseMode::root_sum_over_n;
  EXPECT_NEAR(compute_metrics(a, p, o).rmse, 0.5, 1e-12);
}

TEST(Metrics, MaeNeverExceedsRmseAndIgnoresOrder) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(5.0, 2.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> a(40), p(40);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = g(rng);
      p[i] = g(rng);
    }
    const auto m = compute_metrics(a, p, {RmseMode::standard, false, false});
    EXPECT_LE(m.mae, m.rmse + 1e-12);
    std::vector<std::size_t> idx(a.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> a2, p2;
    for (auto i : idx) {
      a2.push_back(a[i]);
      p2.push_back(p[i]);
    }
    const auto m2 = compute_metrics(a2, p2, {RmseMode::standard, false, false});
    EXPECT_NEAR(m2.rmse, m.rmse, 1e-12);
    EXPECT_NEAR(m2.mae, m.mae, 1e-12);
  }
}

TEST(Metrics, LengthMismatchIsRejected) {
  const std::vector<double> a{1.0, 2.0}, p{1.0};
  EXPECT_THROW(compute_metrics(a, p), ContractError);
  EXPECT_THROW(compute_metrics(std::vector<double>{}, std::vector<double>{}), ContractError);
}

TEST(StudentT, ClosedFormsForOneAndTwoDegrees) {
  for (double t : {0.0, 0.3, 1.0, 2.5, 12.0}) {
    EXPECT_NEAR(student_t_two_sided_p(t, 1.0), 1.0 - 2.0 / std::numbers::pi * std::atan(t), 1e-12);
    EXPECT_NEAR(student_t_two_sided_p(-t, 2.0), 1.0 - t / std::sqrt(2.0 + t * t), 1e-12);
  }
}

TEST(StudentT, TabulatedCriticalValue) {
  EXPECT_NEAR(student_t_two_sided_p(2.228138852, 10.0), 0.05, 1e-8);
  EXPECT_NEAR(student_t_two_sided_p(1.959963985, 1e9), 0.05, 1e-6);
}

TEST(TTest, IdenticalSeriesAreNotSignificant) {
  const std::vector<double> a{1.0, 4.0, 2.0, 8.0};
  const auto r = paired_t_test(a, a);
  EXPECT_EQ(r.t_stat, 0.0);
  EXPECT_FALSE(r.significant_at_95);
  EXPECT_EQ(r.dof, 3.0);
}

TEST(TTest, ConstantOffsetIsInfinite) {
  const std::vector<double> a{1.0, 4.0, 2.0}, p{2.0, 5.0, 3.0};
  const auto r = paired_t_test(a, p);
  EXPECT_TRUE(r.infinite_t);
  EXPECT_TRUE(r.significant_at_95);
}

TEST(TTest, PlantedBiasIsSignificant) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(1.0, 0.1);
  std::vector<double> a(100, 0.0), p(100);
  for (double& v : p) v = g(rng);
  const auto r = paired_t_test(a, p);
  EXPECT_TRUE(r.significant_at_95);
  EXPECT_LT(r.p_value, 1e-3);
  EXPECT_GT(r.t_stat, 0.0);
}

TEST(TTest, HandComputedStatistic) {
  const std::vector<double> a{0.0, 0.0, 0.0}, p{1.0, 2.0, 3.0};
  // mean 2, sd 1, se 1/sqrt(3).
  const auto r = paired_t_test(a, p);
  EXPECT_NEAR(r.t_stat, 2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(r.p_value, 1.0 - 2.0 * std::sqrt(3.0) / std::sqrt(2.0 + 12.0), 1e-12);
}

TEST(TTest, SizeUnderTheNull) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  int rejections = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    std::vector<double> a(100, 0.0), p(100);
    for (double& v : p) v = g(rng);
    if (paired_t_test(a, p).significant_at_95) ++rejections;
  }
  EXPECT_GE(rejections, 30);
  EXPECT_LE(rejections, 70);
}

TEST(TTest, SingleValueIsRejected) {
  EXPECT_THROW(paired_t_test(std::vector<double>{1.0}, std::vector<double>{2.0}), ContractError);
}

TEST(Sweep, FiveTrialQuartiles) {
  const auto s = sweep({{100.0, {5, 1, 4, 2, 3}}});
  const auto& c = s.selected();
  EXPECT_EQ(c.median, 3.0);
  EXPECT_EQ(c.q1, 2.0);
  EXPECT_EQ(c.q3, 4.0);
  EXPECT_EQ(c.min, 1.0);
  EXPECT_EQ(c.max, 5.0);
  EXPECT_EQ(c.trials, 5u);
}

TEST(Sweep, MinimalMedianWins) {
  const auto s = sweep({{50.0, {0.03, 0.03, 0.03}}, {100.0, {0.02, 0.02, 0.02}}});
  EXPECT_EQ(s.selected().candidate, 100.0);
}

TEST(Sweep, TiesGoToTheSmallerCandidate) {
  const auto s = sweep({{200.0, {1, 2, 3}}, {25.0, {1, 2, 3}}, {100.0, {1, 2, 3}}});
  EXPECT_EQ(s.selected().candidate, 25.0);
  EXPECT_EQ(s.candidates.front().candidate, 25.0);
}

TEST(Sweep, EmptyInputsAreRejected) {
  EXPECT_THROW(sweep({}), ContractError);
  EXPECT_THROW(sweep({{1.0, {}}}), ContractError);
}

TEST(Spearman, MonotoneAndTied) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(x, std::vector<double>{2, 4, 8, 16, 32}), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-12);
  // ranks of y: 1.5, 1.5, 3, 4, 5
  const std::vector<double> ry{1.5, 1.5, 3, 4, 5};
  const double my = 3.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < 5; ++i) {
    sxy += (x[i] - 3.0) * (ry[i] - my);
    sxx += (x[i] - 3.0) * (x[i] - 3.0);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  EXPECT_NEAR(spearman(x, std::vector<double>{7, 7, 8, 9, 10}), sxy / std::sqrt(sxx * syy), 1e-12);
}
