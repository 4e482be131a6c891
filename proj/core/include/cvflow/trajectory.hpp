#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "cvflow/common.hpp"

namespace cvflow {

using VehicleId = std::int64_t;
using FrameId = std::int64_t;

/// One vehicle's state at one frame; the surrogate of a basic safety message.
/// All quantities are SI. `position` is the front bumper, measured along the
/// segment from its upstream end.
struct TrajectoryRecord {
  VehicleId vehicle_id = 0;
  FrameId frame_id = 0;
  int lane_id = 0;
  double position = 0.0;
  double speed = 0.0;
  double acceleration = 0.0;
  double vehicle_length = 0.0;
  std::optional<VehicleId> preceding_id;
  std::optional<VehicleId> following_id;

  friend bool operator==(const TrajectoryRecord&, const TrajectoryRecord&) = default;
};

/// Immutable, validated set of trajectory records sorted by (frame, vehicle).
///
/// Construction checks that (vehicle, frame) pairs are unique, frames form a
/// contiguous range, speeds are non-negative, lengths positive, positions lie
/// inside the segment, and every leader reference resolves at its frame.
class TrajectoryDataset {
 public:
  static TrajectoryDataset create(std::vector<TrajectoryRecord> records, double segment_length,
                                  double frame_rate_hz = 10.0);

  std::span<const TrajectoryRecord> records() const noexcept { return records_; }
  double segment_length() const noexcept { return segment_length_; }
  double frame_rate_hz() const noexcept { return frame_rate_hz_; }
  std::string_view unit_system() const noexcept { return "si"; }

  FrameId first_frame() const noexcept { return first_frame_; }
  FrameId last_frame() const noexcept { return first_frame_ + static_cast<FrameId>(frame_count()) - 1; }
  std::size_t frame_count() const noexcept { return frame_offsets_.empty() ? 0 : frame_offsets_.size() - 1; }

  /// Records at `frame`, sorted by vehicle id; empty if out of range.
  std::span<const TrajectoryRecord> frame(FrameId frame) const noexcept;
  /// Record of `vehicle` at `frame`, if present.
  const TrajectoryRecord* find(VehicleId vehicle, FrameId frame) const noexcept;

  std::size_t vehicle_count() const;

 private:
  TrajectoryDataset() = default;

  std::vector<TrajectoryRecord> records_;
  std::vector<std::size_t> frame_offsets_;
  FrameId first_frame_ = 0;
  double segment_length_ = 0.0;
  double frame_rate_hz_ = 10.0;
};

enum class TrajectoryLayout {
  /// `vehicle_id,frame_id,lane_id,position_m,speed_mps,accel_mps2,veh_length_m,preceding_id,following_id`
  native,
  /// NGSIM column names, US customary units (ft, ft/s, ft/s^2), 0 meaning "no vehicle".
  ngsim,
};

inline constexpr double kFeetToMeters = 0.3048;

/// Parses a header-bearing CSV. When `segment_length` is absent it is taken
/// as the largest position in the file.
TrajectoryDataset parse_trajectory_file(std::istream& source, TrajectoryLayout layout,
                                        std::optional<double> segment_length = std::nullopt,
                                        double frame_rate_hz = 10.0);

/// Writes the native layout with round-trip (17 significant digit) precision.
void write_trajectory_csv(std::ostream& out, const TrajectoryDataset& dataset);

/// A sinusoidal component of the synthetic mean-speed signal.
struct SpeedWave {
  double amplitude_mps = 0.0;
  double period_s = 1.0;
  double phase_rad = 0.0;
};

/// Slowly varying mean-speed signal: base + waves + an Ornstein-Uhlenbeck term.
struct SpeedProfile {
  double base_mps = 11.0;
  std::vector<SpeedWave> waves{{2.0, 900.0, 0.6}, {4.0, 180.0, 0.0}};
  double reversion_std_mps = 0.6;  ///< stationary std of the OU term
  double reversion_time_s = 15.0;  ///< OU correlation time
};

/// Per-vehicle AR(1) deviation from the mean profile (per frame).
struct VehicleNoise {
  double ar_coefficient = 0.999;
  double std_mps = 2.0;  ///< stationary standard deviation
};

struct SyntheticConfig {
  std::int64_t n_frames = 9800;
  double segment_length = 500.0;
  double frame_rate_hz = 10.0;
  int lanes = 3;
  double target_vehicle_count = 100.0;  ///< mean number of vehicles on the segment
  SpeedProfile speed_profile;
  VehicleNoise per_vehicle_noise;
  double vehicle_length_mean = 4.5;
  double vehicle_length_std = 0.5;
  double jam_gap = 2.0;  ///< minimum rear-bumper-to-front-bumper gap
  std::uint64_t rng_seed = 2024;
};

void validate(const SyntheticConfig& config);

/// Mean-profile + AR(1) deviation traffic on a straight multi-lane segment.
/// Vehicles enter upstream as Poisson arrivals, keep their lane, never close
/// below the jam gap behind their leader, and leave at the downstream end.
TrajectoryDataset generate_synthetic(const SyntheticConfig& config);

struct HeadwayEntry {
  VehicleId vehicle_id;
  FrameId frame_id;
  double headway;
};

/// Front-to-front space headways keyed by (vehicle, frame). Vehicles without a
/// leader at a frame have no entry.
class HeadwayTable {
 public:
  HeadwayTable(std::vector<HeadwayEntry> entries, FrameId first_frame, std::size_t frame_count);

  std::span<const HeadwayEntry> entries() const noexcept { return entries_; }
  std::span<const HeadwayEntry> frame(FrameId frame) const noexcept;
  std::optional<double> lookup(VehicleId vehicle, FrameId frame) const noexcept;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::vector<HeadwayEntry> entries_;
  std::vector<std::size_t> frame_offsets_;
  FrameId first_frame_;
};

/// Raises ValidationError when a leader is referenced but absent, and when a
/// headway is not strictly positive.
HeadwayTable compute_space_headways(const TrajectoryDataset& dataset);

}  // namespace cvflow
