#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "cvflow/common.hpp"

namespace cvflow {

/// Scalar linear-Gaussian state-space model
///
///   x_t = a x_{t-1} + b u_t + w_t,   w_t ~ N(0, q)
///   z_t = h x_t + v_t,               v_t ~ N(0, r)
///
/// with x_0 ~ N(x0, p0) describing the state before the first measurement.
struct FilterParams {
  double a = 1.0;
  double b = 0.0;
  double h = 1.0;
  double q = 0.0;
  double r = 1.0;
  double x0 = 0.0;
  double p0 = 1.0;
  std::vector<double> u;  ///< control sequence; empty means all zero

  double control(std::size_t t) const noexcept { return t < u.size() ? u[t] : 0.0; }
};

/// Throws ContractError unless q >= 0, r > 0, p0 > 0 and all values are finite.
void validate(const FilterParams& params);

struct FilterResult {
  std::vector<double> prior_x;
  std::vector<double> prior_P;
  std::vector<double> post_x;
  std::vector<double> post_P;
  std::vector<double> gain;

  std::size_t size() const noexcept { return post_x.size(); }
};

struct SmoothResult {
  std::vector<double> smooth_x;
  std::vector<double> smooth_P;
  /// C_t for t < N-1; the last entry is 0 (no successor).
  std::vector<double> smoother_gain;
};

/// Causal trailing mean over min(window, t+1) most recent values.
TimeSeries moving_average(const TimeSeries& series, int window);

/// Forward Kalman pass: prior prediction, gain, measurement update.
FilterResult kalman_forward(const TimeSeries& series, const FilterParams& params);
FilterResult kalman_forward(std::span<const double> measurements, const FilterParams& params);

/// Rauch-Tung-Striebel backward pass over a forward result produced with the
/// same params. The last smoothed state equals the last posterior.
SmoothResult rts_smooth(const FilterResult& forward, const FilterParams& params);

/// Streaming fixed-lag RTS smoother. After pushing z_t it emits the estimate
/// for t - lag, computed by the RTS recursion over [t - lag, t] anchored at
/// the posterior of t. State is single-owner.
class FixedLagSmoother {
 public:
  FixedLagSmoother(FilterParams params, int lag);

  /// Filters one measurement; returns the smoothed value for step t - lag once
  /// t >= lag.
  std::optional<double> push(double measurement);
  /// Emits the estimates still held back (the last `lag` steps) by smoothing
  /// over the remaining window. The smoother is spent afterwards.
  std::vector<double> flush();

  int lag() const noexcept { return lag_; }
  std::size_t steps() const noexcept { return t_; }

 private:
  struct Step {
    double prior_x, prior_P, post_x, post_P;
  };
  double smooth_back_to(std::size_t window_first) const;

  FilterParams params_;
  int lag_;
  std::deque<Step> window_;
  std::size_t t_ = 0;
  double x_;
  double P_;
};

/// Batch wrapper over FixedLagSmoother: element t is the estimate emitted
/// after observing min(t + lag, N - 1).
TimeSeries fixed_lag_smooth(const TimeSeries& series, const FilterParams& params, int lag);

struct NoiseFitOptions {
  /// 100%-penetration series aligned with the input; enables R = var(noise).
  const TimeSeries* reference = nullptr;
  /// Q = rho * R.
  double rho = 0.01;
  /// Estimate from the first `fit_length` values only (0 = whole series).
  std::size_t fit_length = 0;
  std::optional<double> q;
  std::optional<double> r;
};

/// Random-walk model (a = h = 1, b = 0) with data-driven noise variances:
/// R from the noise against the reference when one is given and non-zero,
/// otherwise var(first differences) / 2; Q = rho R; x0 = first value; P0 = R.
/// Explicit q/r options are returned unchanged.
FilterParams fit_noise_params(const TimeSeries& sampled, const NoiseFitOptions& options = {});

}  // namespace cvflow
