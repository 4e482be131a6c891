#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvflow/common.hpp"

namespace cvflow {

/// ARIMA estimation or order selection did not produce a usable fit.
class FitError : public Error {
 public:
  using Error::Error;
};

struct ArimaOrder {
  int p = 0;
  int d = 0;
  int q = 0;

  friend bool operator==(const ArimaOrder&, const ArimaOrder&) = default;
};

std::string to_string(const ArimaOrder& order);

struct ArimaFit {
  ArimaOrder order;
  std::vector<double> phi;
  std::vector<double> theta;
  double intercept = 0.0;
  double sigma2 = 0.0;  ///< CSS / N
  double css = 0.0;
  std::size_t n = 0;    ///< residual terms in the CSS
  double aic = 0.0;
};

/// Conditional sum of squares of an ARMA(p, q) model with intercept `c` on
/// `w`, with pre-sample residuals zero and the sum starting at index p.
double arma_css(std::span<const double> w, double c, std::span<const double> phi, std::span<const double> theta);

/// Yule-Walker AR(p) estimates from sample autocovariances.
std::vector<double> yule_walker(std::span<const double> w, int p);

/// Differences `d` times, then minimizes the CSS with a Nelder-Mead simplex
/// (restarted from the best point) started at the Yule-Walker solution. The
/// search is confined to stationary AR and invertible MA coefficients.
/// aic = N ln(CSS / N) + 2 (p + q + 1).
ArimaFit fit_arima(std::span<const double> train, ArimaOrder order);

struct ArimaGrid {
  std::vector<ArimaOrder> cells;
  /// p in 0..3, d in {0, 1}, q in 0..3.
  static ArimaGrid standard();
};

/// Minimum-AIC fit over the grid; ties go to smaller p + q, then smaller d.
ArimaFit select_arima_order(std::span<const double> train, const ArimaGrid& grid = ArimaGrid::standard());

/// One-step forecasts of history[first..] from the values before each one.
std::vector<double> arima_forecast(const ArimaFit& fit, std::span<const double> history, std::size_t first);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
};

/// OLS of value on index 0..n-1; a single point gives slope 0.
LinearFit fit_linear(std::span<const double> y);

/// In-sample one-step SSE of simple exponential smoothing with s0 = y[0].
double hes_sse(std::span<const double> y, double alpha);
/// Alpha from {0.05, 0.10, ..., 1.00} minimizing hes_sse; ties go to the smaller.
double select_hes_alpha(std::span<const double> y);

enum class BaselineKind { linear_regression, arima, arima_auto, hes };

std::string_view to_string(BaselineKind kind);

struct BaselineSpec {
  BaselineKind kind = BaselineKind::linear_regression;
  ArimaOrder order;              ///< arima only
  std::optional<double> alpha;   ///< hes; empty selects it from the grid
  std::size_t fit_window = 0;    ///< fit on the last n training values; 0 = all
  ArimaGrid grid = ArimaGrid::standard();

  static BaselineSpec linear_regression() { return {}; }
  static BaselineSpec arima(ArimaOrder o) { return {BaselineKind::arima, o, {}, 0, ArimaGrid::standard()}; }
  static BaselineSpec arima_auto() { return {BaselineKind::arima_auto, {}, {}, 0, ArimaGrid::standard()}; }
  static BaselineSpec hes(std::optional<double> alpha = {}) {
    return {BaselineKind::hes, {}, alpha, 0, ArimaGrid::standard()};
  }
};

void validate(const BaselineSpec& spec);

struct BaselineResult {
  std::vector<double> predictions;  ///< one per test value
  std::optional<ArimaFit> arima;
  std::optional<LinearFit> linear;
  std::optional<double> alpha;
  std::string diagnostics;
};

/// Fits on `train` and predicts each value of `test`, which follows it in
/// time. ARIMA and HES are teacher-forced on the observed test values; the
/// regression line is extrapolated over the test indices.
BaselineResult fit_predict_baseline(const TimeSeries& train, const TimeSeries& test, const BaselineSpec& spec);

}  // namespace cvflow
