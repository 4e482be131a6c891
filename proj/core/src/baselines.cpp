#include "cvflow/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>

namespace cvflow {

std::string to_string(const ArimaOrder& o) { return fmt::format("arima({},{},{})", o.p, o.d, o.q); }

std::string_view to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::linear_regression: return "linear_regression";
    case BaselineKind::arima: return "arima";
    case BaselineKind::arima_auto: return "arima_auto";
    case BaselineKind::hes: return "hes";
  }
  return "?";
}

namespace {

std::vector<double> difference(std::span<const double> y, int d) {
  std::vector<double> w(y.begin(), y.end());
  for (int k = 0; k < d; ++k) {
    for (std::size_t i = 0; i + 1 < w.size(); ++i) w[i] = w[i + 1] - w[i];
    if (!w.empty()) w.pop_back();
  }
  return w;
}

void check_order(const ArimaOrder& o) {
  if (o.p < 0 || o.q < 0 || o.d < 0 || o.d > 1) {
    throw ContractError(fmt::format("invalid ARIMA order {}: need p, q >= 0 and d in {{0, 1}}", to_string(o)));
  }
}

// Largest root modulus of z^k - a_1 z^(k-1) - ... - a_k (0 for k = 0).
double spectral_radius(std::span<const double> a) {
  const auto k = static_cast<Eigen::Index>(a.size());
  if (k == 0) return 0.0;
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i) companion(0, i) = a[static_cast<std::size_t>(i)];
  for (Eigen::Index i = 1; i < k; ++i) companion(i, i - 1) = 1.0;
  return companion.eigenvalues().cwiseAbs().maxCoeff();
}

/// Stationary AR part and invertible MA part.
bool admissible(std::span<const double> phi, std::span<const double> theta) {
  std::vector<double> neg(theta.size());
  std::transform(theta.begin(), theta.end(), neg.begin(), [](double v) { return -v; });
  return spectral_radius(phi) < 1.0 && spectral_radius(neg) < 1.0;
}

struct CssProblem {
  std::span<const double> w;  // centered
  int p;
  int q;
  std::vector<double> phi, theta;

  double operator()(const gsl_vector* x) {
    for (int i = 0; i < p; ++i) phi[static_cast<std::size_t>(i)] = gsl_vector_get(x, 1 + static_cast<std::size_t>(i));
    for (int j = 0; j < q; ++j) {
      theta[static_cast<std::size_t>(j)] = gsl_vector_get(x, 1 + static_cast<std::size_t>(p + j));
    }
    if (!admissible(phi, theta)) return 1e300;
    const double css = arma_css(w, gsl_vector_get(x, 0), phi, theta);
    const double v = css / static_cast<double>(w.size() - static_cast<std::size_t>(p));
    return std::isfinite(v) && v < 1e300 ? v : 1e300;
  }
};

double css_trampoline(const gsl_vector* x, void* params) { return (*static_cast<CssProblem*>(params))(x); }

}  // namespace

double arma_css(std::span<const double> w, double c, std::span<const double> phi, std::span<const double> theta) {
  const std::size_t p = phi.size();
  const std::size_t q = theta.size();
  std::vector<double> e(w.size(), 0.0);
  double css = 0.0;
  for (std::size_t t = p; t < w.size(); ++t) {
    double pred = c;
    for (std::size_t i = 0; i < p; ++i) pred += phi[i] * w[t - 1 - i];
    for (std::size_t j = 0; j < q && j < t; ++j) pred += theta[j] * e[t - 1 - j];
    e[t] = w[t] - pred;
    css += e[t] * e[t];
    if (!(css < 1e300)) return std::numeric_limits<double>::infinity();
  }
  return css;
}

std::vector<double> yule_walker(std::span<const double> w, int p) {
  std::vector<double> phi(static_cast<std::size_t>(p), 0.0);
  if (p == 0 || w.size() <= static_cast<std::size_t>(p)) return phi;
  const double mu = mean(w);
  const auto n = static_cast<double>(w.size());
  std::vector<double> gamma(static_cast<std::size_t>(p) + 1, 0.0);
  for (std::size_t lag = 0; lag <= static_cast<std::size_t>(p); ++lag) {
    double s = 0.0;
    for (std::size_t t = lag; t < w.size(); ++t) s += (w[t] - mu) * (w[t - lag] - mu);
    gamma[lag] = s / n;
  }
  if (!(gamma[0] > 0.0)) return phi;
  Eigen::MatrixXd G(p, p);
  Eigen::VectorXd g(p);
  for (int i = 0; i < p; ++i) {
    g[i] = gamma[static_cast<std::size_t>(i) + 1];
    for (int j = 0; j < p; ++j) G(i, j) = gamma[static_cast<std::size_t>(std::abs(i - j))];
  }
  const Eigen::VectorXd sol = G.ldlt().solve(g);
  if (!sol.allFinite()) return phi;
  for (int i = 0; i < p; ++i) phi[static_cast<std::size_t>(i)] = sol[i];
  return phi;
}

ArimaFit fit_arima(std::span<const double> train, ArimaOrder order) {
  check_order(order);
  const auto k = static_cast<std::size_t>(order.p + order.q + 1);
  if (train.size() < 10 * k) {
    throw ContractError(fmt::format("{} needs at least {} training values, got {}", to_string(order), 10 * k,
                                    train.size()));
  }
  const std::vector<double> w = difference(train, order.d);
  const double mu = mean(w);
  std::vector<double> centered(w.size());
  std::transform(w.begin(), w.end(), centered.begin(), [mu](double v) { return v - mu; });

  ArimaFit fit;
  fit.order = order;
  fit.phi.assign(static_cast<std::size_t>(order.p), 0.0);
  fit.theta.assign(static_cast<std::size_t>(order.q), 0.0);

  if (order.p > 0 || order.q > 0) {
    const auto dim = k;
    CssProblem problem{centered, order.p, order.q, fit.phi, fit.theta};
    gsl_multimin_function fn{&css_trampoline, dim, &problem};

    gsl_vector* x = gsl_vector_alloc(dim);
    gsl_vector* step = gsl_vector_alloc(dim);
    gsl_vector_set(x, 0, 0.0);
    auto yw = yule_walker(centered, order.p);
    while (!admissible(yw, {})) {
      for (double& v : yw) v *= 0.9;
    }
    for (int i = 0; i < order.p; ++i) gsl_vector_set(x, 1 + static_cast<std::size_t>(i), yw[static_cast<std::size_t>(i)]);
    for (int j = 0; j < order.q; ++j) gsl_vector_set(x, 1 + static_cast<std::size_t>(order.p + j), 0.0);
    const double sd = std::sqrt(sample_variance(centered));
    gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim);

    const int budget = 2000 * static_cast<int>(dim);
    bool converged = false;
    double best = std::numeric_limits<double>::infinity();
    for (int restart = 0; restart < 4; ++restart) {
      gsl_vector_set_all(step, 0.1);
      gsl_vector_set(step, 0, sd > 0.0 ? 0.1 * sd : 0.1);
      gsl_multimin_fminimizer_set(s, &fn, x, step);
      int status = GSL_CONTINUE;
      for (int iter = 0; iter < budget && status == GSL_CONTINUE; ++iter) {
        if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
        status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), 1e-9);
      }
      gsl_vector_memcpy(x, gsl_multimin_fminimizer_x(s));
      const double value = gsl_multimin_fminimizer_minimum(s);
      const bool settled = status == GSL_SUCCESS;
      const bool improved = value < best - 1e-12 * std::abs(best);
      best = std::min(best, value);
      if (settled && !improved && restart > 0) {
        converged = true;
        break;
      }
      converged = settled;
    }
    const double c_centered = gsl_vector_get(x, 0);
    for (int i = 0; i < order.p; ++i) fit.phi[static_cast<std::size_t>(i)] = gsl_vector_get(x, 1 + static_cast<std::size_t>(i));
    for (int j = 0; j < order.q; ++j) {
      fit.theta[static_cast<std::size_t>(j)] = gsl_vector_get(x, 1 + static_cast<std::size_t>(order.p + j));
    }
    gsl_multimin_fminimizer_free(s);
    gsl_vector_free(step);
    gsl_vector_free(x);
    if (!converged || !(best < 1e300)) {
      throw FitError(fmt::format("{}: simplex search did not converge within the iteration budget", to_string(order)));
    }
    double phi_sum = 0.0;
    for (double v : fit.phi) phi_sum += v;
    fit.intercept = c_centered + mu * (1.0 - phi_sum);
  } else {
    fit.intercept = mu;
  }

  fit.css = arma_css(w, fit.intercept, fit.phi, fit.theta);
  fit.n = w.size() - static_cast<std::size_t>(order.p);
  fit.sigma2 = fit.css / static_cast<double>(fit.n);
  if (!(fit.sigma2 > 0.0) || !std::isfinite(fit.sigma2)) {
    throw FitError(fmt::format("{}: residual variance is {} (degenerate series)", to_string(order), fit.sigma2));
  }
  fit.aic = static_cast<double>(fit.n) * std::log(fit.sigma2) + 2.0 * static_cast<double>(k);
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::isfinite(fit.aic) || !finite(fit.intercept) || !std::all_of(fit.phi.begin(), fit.phi.end(), finite) ||
      !std::all_of(fit.theta.begin(), fit.theta.end(), finite)) {
    throw FitError(fmt::format("{}: non-finite estimates", to_string(order)));
  }
  return fit;
}

ArimaGrid ArimaGrid::standard() {
  ArimaGrid g;
  for (int p = 0; p <= 3; ++p) {
    for (int d = 0; d <= 1; ++d) {
      for (int q = 0; q <= 3; ++q) g.cells.push_back({p, d, q});
    }
  }
  return g;
}

ArimaFit select_arima_order(std::span<const double> train, const ArimaGrid& grid) {
  if (grid.cells.empty()) throw ContractError("ARIMA grid is empty");
  std::optional<ArimaFit> best;
  std::string failures;
  auto better = [](const ArimaFit& a, const ArimaFit& b) {
    const double tol = 1e-9 * std::max(1.0, std::abs(b.aic));
    if (a.aic < b.aic - tol) return true;
    if (a.aic > b.aic + tol) return false;
    const int pa = a.order.p + a.order.q;
    const int pb = b.order.p + b.order.q;
    if (pa != pb) return pa < pb;
    return a.order.d < b.order.d;
  };
  for (const auto& cell : grid.cells) {
    try {
      ArimaFit f = fit_arima(train, cell);
      if (!best || better(f, *best)) best = std::move(f);
    } catch (const Error& e) {
      failures += fmt::format("\n  {}", e.what());
    }
  }
  if (!best) throw FitError("every ARIMA grid cell failed:" + failures);
  return *best;
}

std::vector<double> arima_forecast(const ArimaFit& fit, std::span<const double> history, std::size_t first) {
  const auto d = static_cast<std::size_t>(fit.order.d);
  const std::size_t p = fit.phi.size();
  const std::size_t q = fit.theta.size();
  if (first < d + p || first > history.size()) {
    throw ContractError("arima_forecast: forecasts need at least p + d preceding values");
  }
  const std::vector<double> w = difference(history, fit.order.d);
  std::vector<double> e(w.size(), 0.0);
  std::vector<double> out;
  out.reserve(history.size() - first);
  for (std::size_t t = 0; t < w.size(); ++t) {
    double pred = w[t];
    if (t >= p) {
      pred = fit.intercept;
      for (std::size_t i = 0; i < p; ++i) pred += fit.phi[i] * w[t - 1 - i];
      for (std::size_t j = 0; j < q && j < t; ++j) pred += fit.theta[j] * e[t - 1 - j];
      e[t] = w[t] - pred;
    }
    const std::size_t original = t + d;
    if (original >= first) out.push_back(d == 1 ? history[original - 1] + pred : pred);
  }
  return out;
}

LinearFit fit_linear(std::span<const double> y) {
  if (y.empty()) throw ContractError("fit_linear: no data");
  LinearFit f;
  const double n = static_cast<double>(y.size());
  const double ybar = mean(y);
  if (y.size() == 1) {
    f.intercept = ybar;
    return f;
  }
  const double xbar = (n - 1.0) / 2.0;
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double dx = static_cast<double>(i) - xbar;
    sxy += dx * (y[i] - ybar);
    sxx += dx * dx;
  }
  f.slope = sxy / sxx;
  f.intercept = ybar - f.slope * xbar;
  return f;
}

double hes_sse(std::span<const double> y, double alpha) {
  if (y.empty()) return 0.0;
  double s = y[0];
  double sse = 0.0;
  for (std::size_t t = 1; t < y.size(); ++t) {
    const double e = y[t] - s;
    sse += e * e;
    s = alpha * y[t] + (1.0 - alpha) * s;
  }
  return sse;
}

double select_hes_alpha(std::span<const double> y) {
  double best_alpha = 0.05;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 20; ++k) {
    const double alpha = 0.05 * k;
    const double sse = hes_sse(y, alpha);
    if (sse < best) {
      best = sse;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

void validate(const BaselineSpec& spec) {
  if (spec.kind == BaselineKind::arima) check_order(spec.order);
  if (spec.kind == BaselineKind::arima_auto) {
    if (spec.grid.cells.empty()) throw ContractError("ARIMA grid is empty");
    for (const auto& c : spec.grid.cells) check_order(c);
  }
  if (spec.kind == BaselineKind::hes && spec.alpha && !(*spec.alpha > 0.0 && *spec.alpha <= 1.0)) {
    throw ContractError(fmt::format("HES alpha must be in (0, 1], got {}", *spec.alpha));
  }
}

BaselineResult fit_predict_baseline(const TimeSeries& train, const TimeSeries& test, const BaselineSpec& spec) {
  validate(spec);
  if (train.values.empty()) throw ContractError("baseline: training series is empty");
  const std::size_t window =
      spec.fit_window == 0 ? train.size() : std::min(spec.fit_window, train.size());
  const auto fit_part = train.view().last(window);

  BaselineResult res;
  switch (spec.kind) {
    case BaselineKind::linear_regression: {
      const LinearFit f = fit_linear(fit_part);
      res.predictions.resize(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) {
        res.predictions[i] = f.intercept + f.slope * static_cast<double>(window + i);
      }
      res.linear = f;
      res.diagnostics = fmt::format("ols slope={:.6g} intercept={:.6g}", f.slope, f.intercept);
      break;
    }
    case BaselineKind::hes: {
      const double alpha = spec.alpha ? *spec.alpha : select_hes_alpha(fit_part);
      double s = fit_part[0];
      for (std::size_t t = 1; t < fit_part.size(); ++t) s = alpha * fit_part[t] + (1.0 - alpha) * s;
      res.predictions.resize(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) {
        res.predictions[i] = s;
        s = alpha * test.values[i] + (1.0 - alpha) * s;
      }
      res.alpha = alpha;
      res.diagnostics = fmt::format("hes alpha={:.2f}", alpha);
      break;
    }
    case BaselineKind::arima:
    case BaselineKind::arima_auto: {
      ArimaFit f = spec.kind == BaselineKind::arima ? fit_arima(fit_part, spec.order)
                                                    : select_arima_order(fit_part, spec.grid);
      std::vector<double> history(fit_part.begin(), fit_part.end());
      history.insert(history.end(), test.values.begin(), test.values.end());
      res.predictions = arima_forecast(f, history, window);
      res.diagnostics = fmt::format("{} aic={:.6g} sigma2={:.6g}", to_string(f.order), f.aic, f.sigma2);
      res.arima = std::move(f);
      break;
    }
  }
  return res;
}

}  // namespace cvflow
