#include "cvflow/flowparams.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

namespace cvflow {

namespace {

std::size_t sample_size(double penetration_pct, std::size_t available) {
  // q * n / 100 with a small guard so exact products such as 10% of 30 do not round up.
  const double exact = penetration_pct * static_cast<double>(available) / 100.0;
  const auto k = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::clamp<std::size_t>(k, 1, available);
}

bool in_fleet(std::uint64_t seed, VehicleId vehicle, double penetration_pct) {
  if (penetration_pct >= 100.0) return true;
  const std::uint64_t h = derive_seed(seed, {static_cast<std::uint64_t>(vehicle)});
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < penetration_pct / 100.0;
}

}  // namespace

TimeSeries aggregate(const TrajectoryDataset& dataset, Quantity quantity, double penetration_pct,
                     std::uint64_t rng_seed, SamplingMode mode) {
  if (quantity == Quantity::headway) {
    return aggregate(dataset, compute_space_headways(dataset), quantity, penetration_pct, rng_seed, mode);
  }
  const HeadwayTable none({}, dataset.first_frame(), dataset.frame_count());
  return aggregate(dataset, none, quantity, penetration_pct, rng_seed, mode);
}

TimeSeries aggregate(const TrajectoryDataset& dataset, const HeadwayTable& headways, Quantity quantity,
                     double penetration_pct, std::uint64_t rng_seed, SamplingMode mode) {
  if (!(penetration_pct > 0.0 && penetration_pct <= 100.0)) {
    throw ContractError(fmt::format("penetration must lie in (0, 100], got {}", penetration_pct));
  }
  TimeSeries out;
  out.quantity = quantity;
  out.frame_rate_hz = dataset.frame_rate_hz();
  out.penetration_pct = penetration_pct;
  if (penetration_pct < 100.0) out.rng_seed = rng_seed;
  out.values.reserve(dataset.frame_count());

  std::mt19937_64 rng(rng_seed);
  std::vector<double> available;
  std::vector<VehicleId> ids;
  for (FrameId f = dataset.first_frame(); f <= dataset.last_frame(); ++f) {
    available.clear();
    ids.clear();
    if (quantity == Quantity::speed) {
      for (const auto& r : dataset.frame(f)) {
        available.push_back(r.speed);
        ids.push_back(r.vehicle_id);
      }
    } else {
      for (const auto& e : headways.frame(f)) {
        available.push_back(e.headway);
        ids.push_back(e.vehicle_id);
      }
    }
    if (available.empty()) {
      throw Error(fmt::format("aggregation: frame {} has no vehicles with a defined {}", f, to_string(quantity)));
    }

    if (mode == SamplingMode::persistent_fleet) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < available.size(); ++i) {
        if (in_fleet(rng_seed, ids[i], penetration_pct)) {
          sum += available[i];
          ++n;
        }
      }
      if (n > 0) {
        out.values.push_back(sum / static_cast<double>(n));
      } else if (!out.values.empty()) {
        out.values.push_back(out.values.back());
      } else {
        throw Error(fmt::format("aggregation: no connected vehicle present at frame {} (persistent fleet)", f));
      }
      continue;
    }

    const std::size_t k = sample_size(penetration_pct, available.size());
    double sum = 0.0;
    if (k == available.size()) {
      sum = std::accumulate(available.begin(), available.end(), 0.0);
    } else {
      // Partial Fisher-Yates: the first k slots become a uniform sample without replacement.
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, available.size() - 1);
        std::swap(available[i], available[pick(rng)]);
        sum += available[i];
      }
    }
    out.values.push_back(sum / static_cast<double>(k));
  }
  return out;
}

NoiseReport describe_noise(std::vector<double> noise) {
  if (noise.empty()) throw ContractError("noise sample is empty");
  NoiseReport rep;
  const std::size_t n = noise.size();
  rep.mean = mean(noise);
  rep.std = std::sqrt(sample_variance(noise));

  const auto [lo_it, hi_it] = std::minmax_element(noise.begin(), noise.end());
  double lo = *lo_it;
  double hi = *hi_it;
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const auto bins = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  rep.histogram.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    rep.histogram.edges[b] = lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins);
  }
  rep.histogram.counts.assign(bins, 0);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (double v : noise) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    ++rep.histogram.counts[std::min(b, bins - 1)];
  }

  std::vector<double> sorted = noise;
  std::sort(sorted.begin(), sorted.end());
  const boost::math::normal_distribution<double> standard;
  rep.qq_points.resize(n);
  rep.zero_variance = !(rep.std > 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = (static_cast<double>(i + 1) - 0.375) / (static_cast<double>(n) + 0.25);
    const double z = rep.zero_variance ? 0.0 : (sorted[i] - rep.mean) / rep.std;
    rep.qq_points[i] = {boost::math::quantile(standard, p), z};
  }

  if (rep.zero_variance || n < 2) {
    rep.qq_pearson_r = 1.0;
  } else {
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : rep.qq_points) {
      mx += x;
      my += y;
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (const auto& [x, y] : rep.qq_points) {
      sxy += (x - mx) * (y - my);
      sxx += (x - mx) * (x - mx);
      syy += (y - my) * (y - my);
    }
    rep.qq_pearson_r = sxy / std::sqrt(sxx * syy);
  }
  rep.noise = std::move(noise);
  return rep;
}

NoiseReport noise_series(const TimeSeries& sampled, const TimeSeries& full) {
  if (sampled.size() != full.size()) {
    throw ContractError(fmt::format("noise_series: length mismatch ({} vs {})", sampled.size(), full.size()));
  }
  if (sampled.quantity != full.quantity) throw ContractError("noise_series: quantity mismatch");
  if (full.penetration_pct != 100.0) throw ContractError("noise_series: reference must be the 100% series");
  std::vector<double> noise(sampled.size());
  for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = sampled.values[i] - full.values[i];
  return describe_noise(std::move(noise));
}

BoxStats box_stats(std::span<const double> values) {
  if (values.size() < 4) throw ContractError("box_stats needs at least 4 values");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  BoxStats s;
  s.q1 = quantile_sorted(sorted, 0.25);
  s.median = quantile_sorted(sorted, 0.5);
  s.q3 = quantile_sorted(sorted, 0.75);
  const double iqr = s.q3 - s.q1;
  s.lower_fence = s.q1 - 1.5 * iqr;
  s.upper_fence = s.q3 + 1.5 * iqr;
  s.outlier_count = static_cast<std::size_t>(std::count_if(
      sorted.begin(), sorted.end(), [&](double v) { return v < s.lower_fence || v > s.upper_fence; }));
  return s;
}

BoxStats box_stats(const TimeSeries& series) { return box_stats(series.view()); }

void write_series_csv(std::ostream& out, const TimeSeries& series, FrameId first_frame) {
  out << "# quantity: " << to_string(series.quantity) << '\n';
  out << fmt::format("# penetration_pct: {}\n", series.penetration_pct);
  out << fmt::format("# frame_rate_hz: {}\n", series.frame_rate_hz);
  out << "# rng_seed: " << (series.rng_seed ? std::to_string(*series.rng_seed) : std::string("none")) << '\n';
  out << "frame_id,value\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    out << fmt::format("{},{:.17g}\n", first_frame + static_cast<FrameId>(i), series.values[i]);
  }
}

TimeSeries read_series_csv(std::istream& in) {
  TimeSeries s;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("# ", 0) == 0) {
      const auto colon = line.find(':');
      if (colon == std::string::npos) continue;
      const std::string key = line.substr(2, colon - 2);
      const std::string value = line.substr(colon + 2);
      if (key == "quantity") s.quantity = quantity_from_string(value);
      else if (key == "penetration_pct") s.penetration_pct = std::stod(value);
      else if (key == "frame_rate_hz") s.frame_rate_hz = std::stod(value);
      else if (key == "rng_seed" && value != "none") s.rng_seed = std::stoull(value);
      continue;
    }
    if (!header_seen) {
      if (line != "frame_id,value") throw ParseError(line_no, "expected header 'frame_id,value'");
      header_seen = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError(line_no, "expected two columns");
    try {
      std::size_t used = 0;
      const std::string field = line.substr(comma + 1);
      s.values.push_back(std::stod(field, &used));
      if (used != field.size()) throw ParseError(line_no, "trailing characters in value");
    } catch (const std::logic_error&) {
      throw ParseError(line_no, "value is not a number");
    }
  }
  validate(s);
  return s;
}

}  // namespace cvflow
