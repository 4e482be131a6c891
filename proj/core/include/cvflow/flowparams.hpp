#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "cvflow/common.hpp"
#include "cvflow/trajectory.hpp"

namespace cvflow {

enum class SamplingMode {
  /// An independent sample of vehicles is drawn at every frame.
  per_frame,
  /// Each vehicle is a connected vehicle for its whole life with probability q.
  persistent_fleet,
};

/// Per-frame mean of `quantity` over a q% sample of the vehicles available at
/// that frame. Per-frame sampling draws ceil(q% * available) vehicles without
/// replacement (at least one); q = 100 uses every vehicle and ignores the seed.
/// For headway only vehicles with a leader count as available.
///
/// In persistent-fleet mode a frame in which no connected vehicle is present
/// repeats the previous frame's value; a leading run of such frames is an error.
TimeSeries aggregate(const TrajectoryDataset& dataset, Quantity quantity, double penetration_pct,
                     std::uint64_t rng_seed, SamplingMode mode = SamplingMode::per_frame);

/// Same as above with precomputed headways (avoids recomputing for every cell).
TimeSeries aggregate(const TrajectoryDataset& dataset, const HeadwayTable& headways, Quantity quantity,
                     double penetration_pct, std::uint64_t rng_seed, SamplingMode mode = SamplingMode::per_frame);

struct Histogram {
  std::vector<double> edges;  ///< bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

struct NoiseReport {
  std::vector<double> noise;  ///< sampled - full
  Histogram histogram;
  /// (standard-normal quantile, standardized sample quantile), ascending.
  std::vector<std::pair<double, double>> qq_points;
  double qq_pearson_r = 1.0;
  bool zero_variance = false;  ///< r is undefined and reported as 1
  double mean = 0.0;
  double std = 0.0;

  /// Q-Q correlation of at least 0.99.
  bool gaussian_consistent() const noexcept { return qq_pearson_r >= 0.99; }
};

/// Noise of a sampled series against the full-penetration series, with a
/// sqrt(N)-bin histogram and Blom-position Q-Q diagnostics.
NoiseReport noise_series(const TimeSeries& sampled, const TimeSeries& full);

/// Q-Q diagnostics of an arbitrary sample (used by noise_series).
NoiseReport describe_noise(std::vector<double> noise);

struct BoxStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double lower_fence = 0.0;
  double upper_fence = 0.0;
  std::size_t outlier_count = 0;
};

/// Quartiles (linear interpolation) and Tukey-fence outliers. Needs >= 4 values.
BoxStats box_stats(const TimeSeries& series);
BoxStats box_stats(std::span<const double> values);

/// `frame_id,value` CSV preceded by `# key: value` metadata lines.
void write_series_csv(std::ostream& out, const TimeSeries& series, FrameId first_frame = 1);
TimeSeries read_series_csv(std::istream& in);

}  // namespace cvflow
