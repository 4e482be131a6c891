#pragma once

#include <optional>
#include <span>
#include <vector>

#include "cvflow/common.hpp"

namespace cvflow {

/// A metric is undefined for the given data; `indices()` lists the offenders.
class MetricError : public Error {
 public:
  MetricError(const std::string& what, std::vector<std::size_t> indices)
      : Error(what), indices_(std::move(indices)) {}
  const std::vector<std::size_t>& indices() const noexcept { return indices_; }

 private:
  std::vector<std::size_t> indices_;
};

enum class RmseMode {
  standard,      ///< sqrt(mean(e^2))
  root_sum_over_n  ///< sqrt(sum(e^2)) / N
};

struct MetricOptions {
  RmseMode rmse_mode = RmseMode::standard;
  bool with_mape = true;
  bool normalized = false;  ///< recorded on the result only
};

struct MetricsRecord {
  double rmse = 0.0;
  double mae = 0.0;
  std::optional<double> mape_pct;
  std::size_t n = 0;
  bool normalized = false;
};

MetricsRecord compute_metrics(std::span<const double> actual, std::span<const double> predicted,
                              const MetricOptions& options = {});

struct TTestResult {
  double t_stat = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
  bool significant_at_95 = false;
  /// Every difference equals the same non-zero value, so t is infinite.
  bool infinite_t = false;
};

/// Two-sided paired t-test of d = predicted - actual against mean zero.
TTestResult paired_t_test(std::span<const double> actual, std::span<const double> predicted, double alpha = 0.05);

/// Two-sided p-value of Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

struct CandidateStats {
  double candidate = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t trials = 0;
};

struct SweepStats {
  std::vector<CandidateStats> candidates;  ///< ascending by candidate value
  std::size_t best = 0;                    ///< index of the minimal median

  const CandidateStats& selected() const { return candidates.at(best); }
};

struct SweepTrials {
  double candidate = 0.0;
  std::vector<double> metric;
};

/// Quartiles per candidate; selects the minimal median, ties to the smaller candidate.
SweepStats sweep(std::vector<SweepTrials> trials);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace cvflow
