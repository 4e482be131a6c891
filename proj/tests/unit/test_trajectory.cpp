#include <sstream>

#include <gtest/gtest.h>

#include "cvflow/trajectory.hpp"

using namespace cvflow;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.n_frames = 600;
  c.target_vehicle_count = 40;
  return c;
}

}  // namespace

TEST(Trajectory, ParsesTwoNativeRows) {
  std::istringstream in(
      "vehicle_id,frame_id,lane_id,position_m,speed_mps,accel_mps2,veh_length_m,preceding_id,following_id\n"
      "7,1,1,10.0,5.0,0.0,4.5,,\n"
      "7,2,1,10.5,5.0,0.0,4.5,,\n");
  const auto ds = parse_trajectory_file(in, TrajectoryLayout::native);
  EXPECT_EQ(ds.records().size(), 2u);
  EXPECT_EQ(ds.first_frame(), 1);
  EXPECT_EQ(ds.last_frame(), 2);
  EXPECT_EQ(ds.unit_system(), "si");
}

TEST(Trajectory, NgsimFeetBecomeMeters) {
  std::istringstream in(
      "Vehicle_ID,Frame_ID,Lane_ID,Local_Y,v_Vel,v_Acc,v_Length,Preceding,Following\n"
      "3,10,2,328.084,10,0,15,0,0\n");
  const auto ds = parse_trajectory_file(in, TrajectoryLayout::ngsim, 500.0);
  ASSERT_EQ(ds.records().size(), 1u);
  const auto& r = ds.records()[0];
  EXPECT_NEAR(r.position, 328.084 * 0.3048, 1e-9);
  EXPECT_NEAR(r.speed, 3.048, 1e-12);
  EXPECT_FALSE(r.preceding_id.has_value());
}

TEST(Trajectory, TextInSpeedColumnIsAParseErrorOnThatLine) {
  std::istringstream in(
      "vehicle_id,frame_id,lane_id,position_m,speed_mps,accel_mps2,veh_length_m,preceding_id,following_id\n"
      "7,1,1,10.0,5.0,0.0,4.5,,\n"
      "7,2,1,10.5,fast,0.0,4.5,,\n");
  try {
    parse_trajectory_file(in, TrajectoryLayout::native);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Trajectory, CsvRoundTrip) {
  const auto ds = generate_synthetic(small_config());
  std::ostringstream out;
  write_trajectory_csv(out, ds);
  std::istringstream in(out.str());
  const auto back = parse_trajectory_file(in, TrajectoryLayout::native, ds.segment_length());
  ASSERT_EQ(back.records().size(), ds.records().size());
  for (std::size_t i = 0; i < ds.records().size(); ++i) EXPECT_EQ(back.records()[i], ds.records()[i]);
}

TEST(Synthetic, SameSeedIsByteIdentical) {
  std::ostringstream a, b;
  write_trajectory_csv(a, generate_synthetic(small_config()));
  write_trajectory_csv(b, generate_synthetic(small_config()));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Synthetic, NoNoiseAndFlatProfileGivesConstantSpeed) {
  auto c = small_config();
  c.speed_profile.waves.clear();
  c.speed_profile.reversion_std_mps = 0.0;
  c.speed_profile.base_mps = 12.5;
  c.per_vehicle_noise.std_mps = 0.0;
  const auto ds = generate_synthetic(c);
  for (const auto& r : ds.records()) ASSERT_DOUBLE_EQ(r.speed, 12.5);
}

TEST(Synthetic, DefaultDatasetHasPositiveGapsEverywhere) {
  const auto ds = generate_synthetic(SyntheticConfig{});
  EXPECT_GE(ds.frame_count(), 9800u);
  std::size_t checked = 0;
  for (FrameId f = ds.first_frame(); f <= ds.last_frame(); ++f) {
    for (const auto& r : ds.frame(f)) {
      if (!r.preceding_id) continue;
      const auto* lead = ds.find(*r.preceding_id, f);
      ASSERT_NE(lead, nullptr);
      ASSERT_GT(lead->position - lead->vehicle_length - r.position, 0.0) << "vehicle " << r.vehicle_id << " frame " << f;
      ++checked;
    }
  }
  EXPECT_GT(checked, 100000u);
}

TEST(Headway, LeaderThirtyMetersAhead) {
  std::vector<TrajectoryRecord> recs{{1, 1, 1, 100.0, 5.0, 0.0, 4.0, 2, std::nullopt},
                                     {2, 1, 1, 130.0, 5.0, 0.0, 4.0, std::nullopt, 1}};
  const auto ds = TrajectoryDataset::create(recs, 200.0);
  const auto table = compute_space_headways(ds);
  ASSERT_TRUE(table.lookup(1, 1).has_value());
  EXPECT_DOUBLE_EQ(*table.lookup(1, 1), 30.0);
  EXPECT_FALSE(table.lookup(2, 1).has_value());
  EXPECT_EQ(table.size(), 1u);
}

TEST(Headway, SyntheticHeadwaysArePositive) {
  const auto table = compute_space_headways(generate_synthetic(small_config()));
  ASSERT_GT(table.size(), 0u);
  for (const auto& e : table.entries()) ASSERT_GT(e.headway, 0.0);
}

TEST(Dataset, DuplicateVehicleFrameIsRejected) {
  std::vector<TrajectoryRecord> recs{{1, 1, 1, 10.0, 5.0, 0.0, 4.0, std::nullopt, std::nullopt},
                                     {1, 1, 1, 11.0, 5.0, 0.0, 4.0, std::nullopt, std::nullopt}};
  EXPECT_THROW(TrajectoryDataset::create(recs, 100.0), ValidationError);
}
