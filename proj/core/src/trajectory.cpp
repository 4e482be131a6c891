#include "cvflow/trajectory.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <string>
#include <unordered_set>

#include <fmt/format.h>

namespace cvflow {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, std::string_view column) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (field.empty() || ec != std::errc{} || ptr != last) {
    throw ParseError(line, fmt::format("column '{}': '{}' is not a number", column, field));
  }
  return value;
}

// Accepts integers written as "12" or "12.0" (some NGSIM exports use floats for ids).
std::int64_t parse_id(std::string_view field, std::size_t line, std::string_view column) {
  if (field.find('.') != std::string_view::npos || field.find('e') != std::string_view::npos ||
      field.find('E') != std::string_view::npos) {
    const double v = parse_number<double>(field, line, column);
    if (std::floor(v) != v) throw ParseError(line, fmt::format("column '{}': '{}' is not an integer", column, field));
    return static_cast<std::int64_t>(v);
  }
  return parse_number<std::int64_t>(field, line, column);
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

constexpr std::array<std::string_view, 9> kNativeColumns = {
    "vehicle_id", "frame_id", "lane_id", "position_m", "speed_mps",
    "accel_mps2", "veh_length_m", "preceding_id", "following_id"};

constexpr std::array<std::string_view, 9> kNgsimColumns = {
    "vehicle_id", "frame_id", "lane_id", "local_y", "v_vel", "v_acc", "v_length", "preceding", "following"};

}  // namespace

TrajectoryDataset TrajectoryDataset::create(std::vector<TrajectoryRecord> records, double segment_length,
                                            double frame_rate_hz) {
  if (records.empty()) throw ValidationError("dataset has no records");
  if (!(segment_length > 0.0) || !std::isfinite(segment_length)) {
    throw ValidationError("segment length must be positive");
  }
  if (!(frame_rate_hz > 0.0)) throw ValidationError("frame rate must be positive");

  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.frame_id != b.frame_id ? a.frame_id < b.frame_id : a.vehicle_id < b.vehicle_id;
  });

  TrajectoryDataset ds;
  ds.segment_length_ = segment_length;
  ds.frame_rate_hz_ = frame_rate_hz;
  ds.first_frame_ = records.front().frame_id;
  const FrameId last = records.back().frame_id;
  const auto frame_count = static_cast<std::size_t>(last - ds.first_frame_ + 1);
  ds.frame_offsets_.assign(frame_count + 1, 0);

  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (i > 0 && records[i - 1].frame_id == r.frame_id && records[i - 1].vehicle_id == r.vehicle_id) {
      throw ValidationError(fmt::format("duplicate record for vehicle {} at frame {}", r.vehicle_id, r.frame_id));
    }
    if (!std::isfinite(r.speed) || r.speed < 0.0) {
      throw ValidationError(fmt::format("vehicle {} frame {}: speed {} is negative or non-finite", r.vehicle_id,
                                        r.frame_id, r.speed));
    }
    if (!std::isfinite(r.vehicle_length) || r.vehicle_length <= 0.0) {
      throw ValidationError(fmt::format("vehicle {} frame {}: length must be positive", r.vehicle_id, r.frame_id));
    }
    if (!std::isfinite(r.position) || r.position < 0.0 || r.position > segment_length) {
      throw ValidationError(fmt::format("vehicle {} frame {}: position {} outside [0, {}]", r.vehicle_id,
                                        r.frame_id, r.position, segment_length));
    }
    if (!std::isfinite(r.acceleration)) {
      throw ValidationError(fmt::format("vehicle {} frame {}: non-finite acceleration", r.vehicle_id, r.frame_id));
    }
    ++ds.frame_offsets_[static_cast<std::size_t>(r.frame_id - ds.first_frame_) + 1];
  }
  for (std::size_t f = 0; f < frame_count; ++f) {
    if (ds.frame_offsets_[f + 1] == 0) {
      throw ValidationError(fmt::format("frame range is not contiguous: frame {} has no records",
                                        ds.first_frame_ + static_cast<FrameId>(f)));
    }
    ds.frame_offsets_[f + 1] += ds.frame_offsets_[f];
  }
  ds.records_ = std::move(records);

  for (const auto& r : ds.records_) {
    if (r.preceding_id && !ds.find(*r.preceding_id, r.frame_id)) {
      throw ValidationError(fmt::format("vehicle {} frame {}: preceding vehicle {} is not present at that frame",
                                        r.vehicle_id, r.frame_id, *r.preceding_id));
    }
  }
  return ds;
}

std::span<const TrajectoryRecord> TrajectoryDataset::frame(FrameId frame) const noexcept {
  if (frame < first_frame_ || frame > last_frame()) return {};
  const auto f = static_cast<std::size_t>(frame - first_frame_);
  return std::span<const TrajectoryRecord>(records_).subspan(frame_offsets_[f],
                                                             frame_offsets_[f + 1] - frame_offsets_[f]);
}

const TrajectoryRecord* TrajectoryDataset::find(VehicleId vehicle, FrameId frame_id) const noexcept {
  const auto recs = frame(frame_id);
  const auto it = std::lower_bound(recs.begin(), recs.end(), vehicle,
                                   [](const TrajectoryRecord& r, VehicleId v) { return r.vehicle_id < v; });
  if (it == recs.end() || it->vehicle_id != vehicle) return nullptr;
  return &*it;
}

std::size_t TrajectoryDataset::vehicle_count() const {
  std::unordered_set<VehicleId> ids;
  for (const auto& r : records_) ids.insert(r.vehicle_id);
  return ids.size();
}

TrajectoryDataset parse_trajectory_file(std::istream& source, TrajectoryLayout layout,
                                        std::optional<double> segment_length, double frame_rate_hz) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(source, line)) throw ParseError(1, "missing header");
  ++line_no;

  const auto header = split_csv(line);
  const auto& wanted = layout == TrajectoryLayout::native ? kNativeColumns : kNgsimColumns;
  std::array<std::size_t, 9> column_index{};
  if (layout == TrajectoryLayout::native) {
    if (header.size() != wanted.size()) {
      throw ParseError(1, fmt::format("expected {} header columns, found {}", wanted.size(), header.size()));
    }
    for (std::size_t c = 0; c < wanted.size(); ++c) {
      if (lowercase(header[c]) != wanted[c]) {
        throw ParseError(1, fmt::format("header column {} should be '{}', found '{}'", c + 1, wanted[c], header[c]));
      }
      column_index[c] = c;
    }
  } else {
    for (std::size_t c = 0; c < wanted.size(); ++c) {
      const auto it = std::find_if(header.begin(), header.end(),
                                   [&](std::string_view h) { return lowercase(h) == wanted[c]; });
      if (it == header.end()) throw ParseError(1, fmt::format("NGSIM header lacks column '{}'", wanted[c]));
      column_index[c] = static_cast<std::size_t>(it - header.begin());
    }
  }

  const double scale = layout == TrajectoryLayout::ngsim ? kFeetToMeters : 1.0;
  std::vector<TrajectoryRecord> records;
  double max_position = 0.0;
  while (std::getline(source, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError(line_no, fmt::format("expected {} columns, found {}", header.size(), fields.size()));
    }
    auto field = [&](std::size_t c) { return fields[column_index[c]]; };
    auto optional_id = [&](std::size_t c) -> std::optional<VehicleId> {
      const auto f = field(c);
      if (f.empty()) return std::nullopt;
      const auto id = parse_id(f, line_no, wanted[c]);
      if (layout == TrajectoryLayout::ngsim && id == 0) return std::nullopt;
      return id;
    };

    TrajectoryRecord r;
    r.vehicle_id = parse_id(field(0), line_no, wanted[0]);
    r.frame_id = parse_id(field(1), line_no, wanted[1]);
    r.lane_id = static_cast<int>(parse_id(field(2), line_no, wanted[2]));
    r.position = parse_number<double>(field(3), line_no, wanted[3]) * scale;
    r.speed = parse_number<double>(field(4), line_no, wanted[4]) * scale;
    r.acceleration = parse_number<double>(field(5), line_no, wanted[5]) * scale;
    r.vehicle_length = parse_number<double>(field(6), line_no, wanted[6]) * scale;
    r.preceding_id = optional_id(7);
    r.following_id = optional_id(8);
    max_position = std::max(max_position, r.position);
    records.push_back(r);
  }
  return TrajectoryDataset::create(std::move(records), segment_length.value_or(max_position), frame_rate_hz);
}

void write_trajectory_csv(std::ostream& out, const TrajectoryDataset& dataset) {
  out << "vehicle_id,frame_id,lane_id,position_m,speed_mps,accel_mps2,veh_length_m,preceding_id,following_id\n";
  auto id = [](const std::optional<VehicleId>& v) { return v ? std::to_string(*v) : std::string(); };
  for (const auto& r : dataset.records()) {
    out << fmt::format("{},{},{},{:.17g},{:.17g},{:.17g},{:.17g},{},{}\n", r.vehicle_id, r.frame_id, r.lane_id,
                       r.position, r.speed, r.acceleration, r.vehicle_length, id(r.preceding_id),
                       id(r.following_id));
  }
}

void validate(const SyntheticConfig& c) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ContractError(fmt::format("synthetic config: {} must be positive", name));
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ContractError(fmt::format("synthetic config: {} must be finite and non-negative", name));
    }
  };
  if (c.n_frames <= 0) throw ContractError("synthetic config: n_frames must be positive");
  if (c.lanes <= 0) throw ContractError("synthetic config: lanes must be positive");
  positive(c.segment_length, "segment_length");
  positive(c.frame_rate_hz, "frame_rate_hz");
  positive(c.target_vehicle_count, "target_vehicle_count");
  positive(c.speed_profile.base_mps, "speed_profile.base_mps");
  positive(c.speed_profile.reversion_time_s, "speed_profile.reversion_time_s");
  non_negative(c.speed_profile.reversion_std_mps, "speed_profile.reversion_std_mps");
  for (const auto& w : c.speed_profile.waves) {
    non_negative(w.amplitude_mps, "wave amplitude");
    positive(w.period_s, "wave period");
  }
  non_negative(c.per_vehicle_noise.std_mps, "per_vehicle_noise.std_mps");
  if (!(std::abs(c.per_vehicle_noise.ar_coefficient) < 1.0)) {
    throw ContractError("synthetic config: AR(1) coefficient must lie in (-1, 1)");
  }
  positive(c.vehicle_length_mean, "vehicle_length_mean");
  non_negative(c.vehicle_length_std, "vehicle_length_std");
  non_negative(c.jam_gap, "jam_gap");
}

namespace {

struct SimVehicle {
  VehicleId id;
  double position;
  double length;
  double deviation;
  double speed = 0.0;
  std::optional<double> last_speed;
};

}  // namespace

TrajectoryDataset generate_synthetic(const SyntheticConfig& config) {
  validate(config);
  std::mt19937_64 rng(config.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const double dt = 1.0 / config.frame_rate_hz;
  const auto& profile = config.speed_profile;
  const auto& noise = config.per_vehicle_noise;
  const double innovation_scale = noise.std_mps * std::sqrt(1.0 - noise.ar_coefficient * noise.ar_coefficient);
  const double ou_decay = std::exp(-dt / profile.reversion_time_s);
  const double ou_scale = profile.reversion_std_mps * std::sqrt(1.0 - ou_decay * ou_decay);
  const double entry_gap = config.jam_gap + 2.0;
  const double arrival_rate_per_lane =
      config.target_vehicle_count * profile.base_mps / config.segment_length / config.lanes;
  std::exponential_distribution<double> interarrival(arrival_rate_per_lane);

  const auto burn_in =
      static_cast<std::int64_t>(std::ceil(3.0 * config.segment_length / profile.base_mps / dt));
  const std::int64_t total_steps = burn_in + config.n_frames;

  std::vector<std::deque<SimVehicle>> lanes(static_cast<std::size_t>(config.lanes));
  std::vector<double> next_arrival(lanes.size());
  std::vector<int> waiting(lanes.size(), 0);
  for (auto& t : next_arrival) t = interarrival(rng);

  auto draw_length = [&] {
    return std::max(0.5 * config.vehicle_length_mean,
                    config.vehicle_length_mean + config.vehicle_length_std * normal(rng));
  };

  double ou = profile.reversion_std_mps * normal(rng);
  VehicleId next_id = 1;
  std::vector<TrajectoryRecord> records;
  records.reserve(static_cast<std::size_t>(config.n_frames * config.target_vehicle_count * 1.2));

  for (std::int64_t step = 0; step < total_steps; ++step) {
    const double t = static_cast<double>(step) * dt;
    double mean_speed = profile.base_mps + ou;
    for (const auto& w : profile.waves) {
      mean_speed += w.amplitude_mps * std::sin(2.0 * M_PI * t / w.period_s + w.phase_rad);
    }

    for (std::size_t l = 0; l < lanes.size(); ++l) {
      while (next_arrival[l] <= t) {
        ++waiting[l];
        next_arrival[l] += interarrival(rng);
      }
      auto& lane = lanes[l];
      const bool room = lane.empty() || lane.back().position - lane.back().length >= entry_gap;
      if (waiting[l] > 0 && room) {
        --waiting[l];
        lane.push_back(SimVehicle{next_id++, 0.0, draw_length(), noise.std_mps * normal(rng), 0.0, std::nullopt});
      }
    }

    const bool recording = step >= burn_in;
    const FrameId frame = step - burn_in + 1;
    for (std::size_t l = 0; l < lanes.size(); ++l) {
      auto& lane = lanes[l];
      for (std::size_t k = 0; k < lane.size(); ++k) {
        auto& v = lane[k];
        double speed = std::max(0.0, mean_speed + v.deviation);
        if (k > 0) {
          const auto& leader = lane[k - 1];
          const double limit = leader.position + leader.speed * dt - leader.length - config.jam_gap;
          speed = std::max(0.0, std::min(speed, (limit - v.position) / dt));
        }
        v.speed = speed;
        if (recording) {
          TrajectoryRecord r;
          r.vehicle_id = v.id;
          r.frame_id = frame;
          r.lane_id = static_cast<int>(l) + 1;
          r.position = v.position;
          r.speed = speed;
          r.acceleration = v.last_speed ? (speed - *v.last_speed) / dt : 0.0;
          r.vehicle_length = v.length;
          if (k > 0) r.preceding_id = lane[k - 1].id;
          if (k + 1 < lane.size()) r.following_id = lane[k + 1].id;
          records.push_back(r);
        }
        v.last_speed = speed;
      }
    }

    for (auto& lane : lanes) {
      for (auto& v : lane) {
        v.position += v.speed * dt;
        v.deviation = noise.ar_coefficient * v.deviation + innovation_scale * normal(rng);
      }
      while (!lane.empty() && lane.front().position > config.segment_length) lane.pop_front();
    }
    ou = ou_decay * ou + ou_scale * normal(rng);
  }

  // Count per frame before construction so an empty frame gets a useful message.
  std::vector<std::size_t> per_frame(static_cast<std::size_t>(config.n_frames), 0);
  for (const auto& r : records) ++per_frame[static_cast<std::size_t>(r.frame_id - 1)];
  for (std::size_t f = 0; f < per_frame.size(); ++f) {
    if (per_frame[f] == 0) {
      throw Error(fmt::format("synthetic generation produced no vehicles at frame {}; increase target_vehicle_count",
                              f + 1));
    }
  }
  return TrajectoryDataset::create(std::move(records), config.segment_length, config.frame_rate_hz);
}

HeadwayTable::HeadwayTable(std::vector<HeadwayEntry> entries, FrameId first_frame, std::size_t frame_count)
    : entries_(std::move(entries)), frame_offsets_(frame_count + 1, 0), first_frame_(first_frame) {
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
    return a.frame_id != b.frame_id ? a.frame_id < b.frame_id : a.vehicle_id < b.vehicle_id;
  });
  for (const auto& e : entries_) {
    if (e.frame_id < first_frame || e.frame_id >= first_frame + static_cast<FrameId>(frame_count)) {
      throw ContractError(fmt::format("headway entry at frame {} outside table range", e.frame_id));
    }
    ++frame_offsets_[static_cast<std::size_t>(e.frame_id - first_frame) + 1];
  }
  for (std::size_t f = 0; f < frame_count; ++f) frame_offsets_[f + 1] += frame_offsets_[f];
}

std::span<const HeadwayEntry> HeadwayTable::frame(FrameId frame) const noexcept {
  if (frame < first_frame_ || frame >= first_frame_ + static_cast<FrameId>(frame_offsets_.size() - 1)) return {};
  const auto f = static_cast<std::size_t>(frame - first_frame_);
  return std::span<const HeadwayEntry>(entries_).subspan(frame_offsets_[f], frame_offsets_[f + 1] - frame_offsets_[f]);
}

std::optional<double> HeadwayTable::lookup(VehicleId vehicle, FrameId frame_id) const noexcept {
  const auto es = frame(frame_id);
  const auto it = std::lower_bound(es.begin(), es.end(), vehicle,
                                   [](const HeadwayEntry& e, VehicleId v) { return e.vehicle_id < v; });
  if (it == es.end() || it->vehicle_id != vehicle) return std::nullopt;
  return it->headway;
}

HeadwayTable compute_space_headways(const TrajectoryDataset& dataset) {
  std::vector<HeadwayEntry> entries;
  entries.reserve(dataset.records().size());
  for (const auto& r : dataset.records()) {
    if (!r.preceding_id) continue;
    const auto* leader = dataset.find(*r.preceding_id, r.frame_id);
    if (!leader) {
      throw ValidationError(fmt::format("vehicle {} frame {}: leader {} not found at that frame", r.vehicle_id,
                                        r.frame_id, *r.preceding_id));
    }
    const double headway = leader->position - r.position;
    if (!(headway > 0.0)) {
      throw ValidationError(fmt::format("vehicle {} frame {}: non-positive headway {} to leader {}", r.vehicle_id,
                                        r.frame_id, headway, leader->vehicle_id));
    }
    entries.push_back({r.vehicle_id, r.frame_id, headway});
  }
  return HeadwayTable(std::move(entries), dataset.first_frame(), dataset.frame_count());
}

}  // namespace cvflow
