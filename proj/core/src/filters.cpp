#include "cvflow/filters.hpp"

#include <cmath>

#include <fmt/format.h>

namespace cvflow {

void validate(const FilterParams& p) {
  for (double v : {p.a, p.b, p.h, p.q, p.r, p.x0, p.p0}) {
    if (!std::isfinite(v)) throw ContractError("filter params must be finite");
  }
  if (p.q < 0.0) throw ContractError("filter params: Q must be >= 0");
  if (!(p.r > 0.0)) throw ContractError("filter params: R must be > 0");
  if (!(p.p0 > 0.0)) throw ContractError("filter params: P0 must be > 0");
}

TimeSeries moving_average(const TimeSeries& series, int window) {
  if (window < 1) throw ContractError(fmt::format("moving_average: window must be >= 1, got {}", window));
  const auto w = static_cast<std::size_t>(window);
  std::vector<double> out(series.size());
  for (std::size_t t = 0; t < series.size(); ++t) {
    const std::size_t first = t + 1 >= w ? t + 1 - w : 0;
    double sum = 0.0;
    for (std::size_t k = first; k <= t; ++k) sum += series.values[k];
    out[t] = sum / static_cast<double>(t + 1 - first);
  }
  return series.with_values(std::move(out));
}

FilterResult kalman_forward(const TimeSeries& series, const FilterParams& params) {
  return kalman_forward(series.view(), params);
}

FilterResult kalman_forward(std::span<const double> z, const FilterParams& params) {
  validate(params);
  const std::size_t n = z.size();
  FilterResult res;
  res.prior_x.resize(n);
  res.prior_P.resize(n);
  res.post_x.resize(n);
  res.post_P.resize(n);
  res.gain.resize(n);

  double x = params.x0;
  double P = params.p0;
  for (std::size_t t = 0; t < n; ++t) {
    const double x_prior = params.a * x + params.b * params.control(t);
    const double P_prior = params.a * P * params.a + params.q;
    const double K = P_prior * params.h / (params.h * P_prior * params.h + params.r);
    x = x_prior + K * (z[t] - params.h * x_prior);
    P = (1.0 - K * params.h) * P_prior;
    if (!std::isfinite(x) || !std::isfinite(P) || !std::isfinite(K)) {
      throw NumericError(fmt::format("kalman_forward: non-finite estimate at step {}", t));
    }
    res.prior_x[t] = x_prior;
    res.prior_P[t] = P_prior;
    res.post_x[t] = x;
    res.post_P[t] = P;
    res.gain[t] = K;
  }
  return res;
}

SmoothResult rts_smooth(const FilterResult& fwd, const FilterParams& params) {
  const std::size_t n = fwd.size();
  SmoothResult s;
  s.smooth_x.resize(n);
  s.smooth_P.resize(n);
  s.smoother_gain.assign(n, 0.0);
  if (n == 0) return s;
  s.smooth_x[n - 1] = fwd.post_x[n - 1];
  s.smooth_P[n - 1] = fwd.post_P[n - 1];
  for (std::size_t k = n - 1; k-- > 0;) {
    if (!(fwd.prior_P[k + 1] > 0.0)) {
      throw NumericError(fmt::format("rts_smooth: prior covariance at step {} is not positive", k + 1));
    }
    const double C = fwd.post_P[k] * params.a / fwd.prior_P[k + 1];
    s.smoother_gain[k] = C;
    s.smooth_x[k] = fwd.post_x[k] + C * (s.smooth_x[k + 1] - fwd.prior_x[k + 1]);
    s.smooth_P[k] = fwd.post_P[k] + C * (s.smooth_P[k + 1] - fwd.prior_P[k + 1]) * C;
  }
  return s;
}

FixedLagSmoother::FixedLagSmoother(FilterParams params, int lag)
    : params_(std::move(params)), lag_(lag), x_(params_.x0), P_(params_.p0) {
  if (lag < 0) throw ContractError(fmt::format("fixed-lag smoother: lag must be >= 0, got {}", lag));
  validate(params_);
}

double FixedLagSmoother::smooth_back_to(std::size_t window_first) const {
  // window_ holds steps [t_ - window_.size(), t_); walk back from the newest.
  double xs = window_.back().post_x;
  for (std::size_t k = window_.size() - 1; k-- > window_first;) {
    const auto& cur = window_[k];
    const auto& next = window_[k + 1];
    if (!(next.prior_P > 0.0)) throw NumericError("fixed-lag smoother: prior covariance is not positive");
    const double C = cur.post_P * params_.a / next.prior_P;
    xs = cur.post_x + C * (xs - next.prior_x);
  }
  return xs;
}

std::optional<double> FixedLagSmoother::push(double z) {
  const double x_prior = params_.a * x_ + params_.b * params_.control(t_);
  const double P_prior = params_.a * P_ * params_.a + params_.q;
  const double K = P_prior * params_.h / (params_.h * P_prior * params_.h + params_.r);
  x_ = x_prior + K * (z - params_.h * x_prior);
  P_ = (1.0 - K * params_.h) * P_prior;
  if (!std::isfinite(x_) || !std::isfinite(P_)) {
    throw NumericError(fmt::format("fixed-lag smoother: non-finite estimate at step {}", t_));
  }
  window_.push_back({x_prior, P_prior, x_, P_});
  ++t_;
  if (window_.size() > static_cast<std::size_t>(lag_) + 1) window_.pop_front();
  if (t_ <= static_cast<std::size_t>(lag_)) return std::nullopt;
  return smooth_back_to(0);
}

std::vector<double> FixedLagSmoother::flush() {
  std::vector<double> out;
  // Estimates already emitted cover steps < t_ - lag; the window's first
  // entry is emitted when the window is full.
  const std::size_t emitted_in_window = t_ > static_cast<std::size_t>(lag_) ? 1 : 0;
  for (std::size_t k = emitted_in_window; k < window_.size(); ++k) out.push_back(smooth_back_to(k));
  window_.clear();
  return out;
}

TimeSeries fixed_lag_smooth(const TimeSeries& series, const FilterParams& params, int lag) {
  FixedLagSmoother smoother(params, lag);
  std::vector<double> out;
  out.reserve(series.size());
  for (double z : series.values) {
    if (auto v = smoother.push(z)) out.push_back(*v);
  }
  for (double v : smoother.flush()) out.push_back(v);
  return series.with_values(std::move(out));
}

FilterParams fit_noise_params(const TimeSeries& sampled, const NoiseFitOptions& options) {
  if (sampled.size() < 10) throw ContractError("fit_noise_params needs at least 10 values");
  const std::size_t n =
      options.fit_length == 0 ? sampled.size() : std::min(options.fit_length, sampled.size());
  const auto head = sampled.view().first(n);

  FilterParams p;
  p.a = 1.0;
  p.b = 0.0;
  p.h = 1.0;
  p.x0 = sampled.values.front();

  if (sample_variance(head) <= 0.0) {
    throw DegenerateInputError("fit_noise_params: input has zero variance; filtering would be a no-op");
  }

  double r = 0.0;
  if (options.r) {
    r = *options.r;
  } else {
    if (options.reference) {
      if (options.reference->size() != sampled.size()) {
        throw ContractError("fit_noise_params: reference length differs from the sampled series");
      }
      std::vector<double> noise(n);
      for (std::size_t i = 0; i < n; ++i) noise[i] = sampled.values[i] - options.reference->values[i];
      r = sample_variance(noise);
    }
    if (!(r > 0.0)) {
      std::vector<double> diffs(n - 1);
      for (std::size_t i = 1; i < n; ++i) diffs[i - 1] = head[i] - head[i - 1];
      r = sample_variance(diffs) / 2.0;
    }
  }
  if (!(r > 0.0)) throw DegenerateInputError("fit_noise_params: measurement noise estimate is zero");
  p.r = r;
  p.q = options.q ? *options.q : options.rho * r;
  p.p0 = r;
  validate(p);
  return p;
}

}  // namespace cvflow
