#include "cvflow/common.hpp"

#include <cmath>
#include <numeric>

namespace cvflow {

std::string_view to_string(Quantity q) {
  return q == Quantity::speed ? "speed" : "headway";
}

Quantity quantity_from_string(std::string_view s) {
  if (s == "speed") return Quantity::speed;
  if (s == "headway") return Quantity::headway;
  throw ContractError("unknown quantity '" + std::string(s) + "'");
}

TimeSeries TimeSeries::with_values(std::vector<double> v) const {
  TimeSeries out = *this;
  out.values = std::move(v);
  return out;
}

TimeSeries TimeSeries::slice(std::size_t first, std::size_t count) const {
  if (first + count > values.size()) {
    throw ContractError("slice [" + std::to_string(first) + ", " + std::to_string(first + count) +
                        ") exceeds series length " + std::to_string(values.size()));
  }
  return with_values(std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(first),
                                         values.begin() + static_cast<std::ptrdiff_t>(first + count)));
}

void validate(const TimeSeries& series) {
  if (series.values.empty()) throw ValidationError("time series is empty");
  if (!(series.penetration_pct > 0.0 && series.penetration_pct <= 100.0)) {
    throw ValidationError("penetration must lie in (0, 100], got " +
                          std::to_string(series.penetration_pct));
  }
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    if (!std::isfinite(series.values[i])) {
      throw ValidationError("non-finite value at index " + std::to_string(i));
    }
  }
}

std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) noexcept {
  std::uint64_t s = mix64(root);
  for (auto k : keys) s = mix64(s ^ k);
  return s;
}

std::uint64_t label_key(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_variance(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return ss / static_cast<double>(x.size() - 1);
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ContractError("quantile of an empty sample");
  const double h = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace cvflow
