#include "cvflow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>

namespace cvflow {

namespace {

void check_pairs(std::span<const double> a, std::span<const double> p, std::size_t min_n, const char* what) {
  if (a.size() != p.size()) {
    throw ContractError(fmt::format("{}: length mismatch ({} actual vs {} predicted)", what, a.size(), p.size()));
  }
  if (a.size() < min_n) throw ContractError(fmt::format("{}: need at least {} pairs", what, min_n));
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> rank(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }
  return rank;
}

}  // namespace

MetricsRecord compute_metrics(std::span<const double> actual, std::span<const double> predicted,
                              const MetricOptions& options) {
  check_pairs(actual, predicted, 1, "compute_metrics");
  const auto n = static_cast<double>(actual.size());
  double sq = 0.0;
  double abs = 0.0;
  for (std::size_t i = 0; i < actual.size(); ++i) {
    const double e = actual[i] - predicted[i];
    sq += e * e;
    abs += std::abs(e);
  }
  MetricsRecord m;
  m.n = actual.size();
  m.normalized = options.normalized;
  m.rmse = options.rmse_mode == RmseMode::standard ? std::sqrt(sq / n) : std::sqrt(sq) / n;
  m.mae = abs / n;
  if (options.with_mape) {
    std::vector<std::size_t> zeros;
    double pct = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
      if (actual[i] == 0.0) {
        zeros.push_back(i);
        continue;
      }
      pct += std::abs(actual[i] - predicted[i]) / std::abs(actual[i]);
    }
    if (!zeros.empty()) {
      std::string list;
      for (std::size_t k = 0; k < zeros.size() && k < 10; ++k) list += fmt::format("{}{}", k ? ", " : "", zeros[k]);
      if (zeros.size() > 10) list += ", ...";
      throw MetricError(fmt::format("MAPE undefined: actual is zero at index {}", list), std::move(zeros));
    }
    m.mape_pct = 100.0 * pct / n;
  }
  return m;
}

double student_t_two_sided_p(double t, double dof) {
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return std::clamp(boost::math::ibeta(dof / 2.0, 0.5, x), 0.0, 1.0);
}

TTestResult paired_t_test(std::span<const double> actual, std::span<const double> predicted, double alpha) {
  check_pairs(actual, predicted, 2, "paired_t_test");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ContractError("paired_t_test: alpha must lie in (0, 1)");
  const std::size_t n = actual.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = predicted[i] - actual[i];

  TTestResult r;
  r.dof = static_cast<double>(n - 1);
  const double dbar = mean(d);
  const double var = sample_variance(d);
  const bool identical = std::all_of(d.begin(), d.end(), [&](double v) { return v == d[0]; });
  if (identical || !(var > 0.0)) {
    if (dbar == 0.0) {
      r.t_stat = 0.0;
      r.p_value = 1.0;
    } else {
      r.infinite_t = true;
      r.t_stat = std::copysign(std::numeric_limits<double>::infinity(), dbar);
      r.p_value = 0.0;
    }
  } else {
    r.t_stat = dbar / std::sqrt(var / static_cast<double>(n));
    r.p_value = student_t_two_sided_p(r.t_stat, r.dof);
  }
  r.significant_at_95 = r.p_value < alpha;
  return r;
}

SweepStats sweep(std::vector<SweepTrials> trials) {
  if (trials.empty()) throw ContractError("sweep: no candidates");
  std::sort(trials.begin(), trials.end(), [](const auto& a, const auto& b) { return a.candidate < b.candidate; });
  SweepStats out;
  for (auto& t : trials) {
    if (t.metric.empty()) throw ContractError(fmt::format("sweep: candidate {} has no trials", t.candidate));
    std::sort(t.metric.begin(), t.metric.end());
    CandidateStats c;
    c.candidate = t.candidate;
    c.trials = t.metric.size();
    c.min = t.metric.front();
    c.max = t.metric.back();
    c.q1 = quantile_sorted(t.metric, 0.25);
    c.median = quantile_sorted(t.metric, 0.5);
    c.q3 = quantile_sorted(t.metric, 0.75);
    out.candidates.push_back(c);
  }
  for (std::size_t i = 1; i < out.candidates.size(); ++i) {
    if (out.candidates[i].median < out.candidates[out.best].median) out.best = i;
  }
  return out;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("spearman: need two equal-length samples of size >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = mean(rx);
  const double my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace cvflow
