#pragma once

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cvflow {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; `line()` is 1-based and counts the header.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A dataset or series violates one of its structural invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-finite or otherwise impossible intermediate value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input carries no information for the requested estimate (e.g. zero variance).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

enum class Quantity { speed, headway };

std::string_view to_string(Quantity q);
Quantity quantity_from_string(std::string_view s);

/// Uniformly sampled scalar series of one flow parameter.
struct TimeSeries {
  std::vector<double> values;
  Quantity quantity = Quantity::speed;
  double frame_rate_hz = 10.0;
  double penetration_pct = 100.0;
  std::optional<std::uint64_t> rng_seed;

  std::size_t size() const noexcept { return values.size(); }
  std::span<const double> view() const noexcept { return values; }

  /// Same metadata, different values.
  TimeSeries with_values(std::vector<double> v) const;
  /// Copy of `[first, first + count)` with the same metadata.
  TimeSeries slice(std::size_t first, std::size_t count) const;
};

/// Throws ValidationError unless the series is non-empty, finite and has a
/// penetration in (0, 100].
void validate(const TimeSeries& series);

/// SplitMix64 finalizer. Used to derive independent seeds from a root seed.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a list of keys into one seed: mix64(...mix64(mix64(root) ^ k0) ^ k1...).
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) noexcept;

/// FNV-1a of a label, so string keys can feed derive_seed.
std::uint64_t label_key(std::string_view label) noexcept;

double mean(std::span<const double> x);
/// Sample variance (n - 1 denominator); 0 for fewer than two values.
double sample_variance(std::span<const double> x);

/// Quantile by linear interpolation between order statistics (R type 7).
/// `sorted` must be ascending and non-empty.
double quantile_sorted(std::span<const double> sorted, double p);

}  // namespace cvflow
