#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cvflow/flowparams.hpp"
#include "cvflow/trajectory.hpp"

using namespace cvflow;

namespace {

const TrajectoryDataset& small_dataset() {
  static const TrajectoryDataset ds = [] {
    SyntheticConfig c;
    c.n_frames = 400;
    c.target_vehicle_count = 60;
    return generate_synthetic(c);
  }();
  return ds;
}

}  // namespace

TEST(Aggregate, FullPenetrationIsTheFrameMeanForAnySeed) {
  const auto& ds = small_dataset();
  const auto a = aggregate(ds, Quantity::speed, 100.0, 1);
  const auto b = aggregate(ds, Quantity::speed, 100.0, 999);
  EXPECT_EQ(a.values, b.values);
  const FrameId f = ds.first_frame() + 17;
  double sum = 0.0;
  for (const auto& r : ds.frame(f)) sum += r.speed;
  EXPECT_NEAR(a.values[17], sum / static_cast<double>(ds.frame(f).size()), 1e-12);
}

TEST(Aggregate, SingleVehicleFrameReturnsThatVehicle) {
  std::vector<TrajectoryRecord> recs{{4, 1, 1, 10.0, 7.25, 0.0, 4.0, std::nullopt, std::nullopt}};
  const auto ds = TrajectoryDataset::create(recs, 100.0);
  for (double q : {1.0, 5.0, 50.0}) EXPECT_DOUBLE_EQ(aggregate(ds, Quantity::speed, q, 3).values.at(0), 7.25);
}

TEST(Aggregate, TenPercentSampleIsUnbiased) {
  const auto& ds = small_dataset();
  const FrameId f = ds.first_frame() + 200;
  const auto frame = ds.frame(f);
  const double k = std::ceil(0.1 * static_cast<double>(frame.size()));
  std::vector<double> speeds;
  for (const auto& r : frame) speeds.push_back(r.speed);
  const double full = mean(speeds);
  const double sigma = std::sqrt(sample_variance(speeds));
  const int seeds = 1500;
  double acc = 0.0;
  for (int s = 0; s < seeds; ++s) acc += aggregate(ds, Quantity::speed, 10.0, 1000 + s).values[200];
  const double mc_mean = acc / seeds;
  // Standard error of the Monte-Carlo mean of k-vehicle sample means.
  const double se = sigma / std::sqrt(k) / std::sqrt(static_cast<double>(seeds));
  EXPECT_LT(std::abs(mc_mean - full), 3.0 * sigma / std::sqrt(k));
  EXPECT_LT(std::abs(mc_mean - full), 4.0 * se);
}

TEST(Noise, IdenticalSeriesFlagZeroVariance) {
  TimeSeries s;
  s.values = {1.0, 2.0, 3.0, 4.0};
  const auto r = noise_series(s, s);
  EXPECT_TRUE(r.zero_variance);
  EXPECT_DOUBLE_EQ(r.std, 0.0);
  EXPECT_DOUBLE_EQ(r.qq_pearson_r, 1.0);
  for (double v : r.noise) EXPECT_EQ(v, 0.0);
}

TEST(Noise, GaussianSampleIsGaussianConsistent) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::vector<double> x(5000);
  for (double& v : x) v = g(rng);
  const auto r = describe_noise(x);
  EXPECT_GT(r.qq_pearson_r, 0.995);
  EXPECT_TRUE(r.gaussian_consistent());
}

TEST(Noise, HeavyTailsLowerTheQqCorrelation) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  std::student_t_distribution<double> t2(2.0);
  std::vector<double> gauss(5000), heavy(5000);
  for (double& v : gauss) v = g(rng);
  for (double& v : heavy) v = t2(rng);
  EXPECT_LT(describe_noise(heavy).qq_pearson_r, describe_noise(gauss).qq_pearson_r);
}

TEST(BoxStats, SymmetricTinyCase) {
  const std::vector<double> v{1, 2, 3, 4, 5};
  const auto b = box_stats(v);
  EXPECT_DOUBLE_EQ(b.median, 3.0);
  EXPECT_DOUBLE_EQ(b.q1, 2.0);
  EXPECT_DOUBLE_EQ(b.q3, 4.0);
  EXPECT_EQ(b.outlier_count, 0u);
}

TEST(BoxStats, PlantedOutlier) {
  const std::vector<double> v{1, 1, 1, 1, 100};
  EXPECT_GE(box_stats(v).outlier_count, 1u);
}

TEST(BoxStats, LowPenetrationHasAtLeastAsManyOutliers) {
  const auto& ds = small_dataset();
  const auto full = box_stats(aggregate(ds, Quantity::speed, 100.0, 0)).outlier_count;
  std::vector<std::size_t> low;
  for (int s = 0; s < 21; ++s) low.push_back(box_stats(aggregate(ds, Quantity::speed, 5.0, 50 + s)).outlier_count);
  std::sort(low.begin(), low.end());
  EXPECT_GE(low[low.size() / 2], full);
}

TEST(SeriesCsv, RoundTrip) {
  TimeSeries s;
  s.values = {1.5, 2.25, 1e-9, 12345.678901234567};
  s.quantity = Quantity::headway;
  s.penetration_pct = 20.0;
  s.rng_seed = 42;
  std::ostringstream out;
  write_series_csv(out, s);
  std::istringstream in(out.str());
  const auto back = read_series_csv(in);
  EXPECT_EQ(back.values, s.values);
  EXPECT_EQ(back.quantity, s.quantity);
  EXPECT_EQ(back.penetration_pct, s.penetration_pct);
  EXPECT_EQ(back.rng_seed, s.rng_seed);
}
