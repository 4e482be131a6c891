#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cvflow/baselines.hpp"
#include "cvflow/common.hpp"
#include "cvflow/evaluation.hpp"
#include "cvflow/filters.hpp"
#include "cvflow/flowparams.hpp"
#include "cvflow/predictors.hpp"
#include "cvflow/trajectory.hpp"

namespace cvflow {

enum class FilterKind { none, moving_average, kalman, rts, fixed_lag_rts };
enum class PredictorKind { lstm, gru, simple, linear_regression, arima_auto, hes };

std::string_view to_string(FilterKind kind);
std::string_view to_string(PredictorKind kind);
FilterKind filter_from_string(std::string_view s);
PredictorKind predictor_from_string(std::string_view s);
bool is_recurrent(PredictorKind kind) noexcept;

struct DataSource {
  std::string path;  ///< empty selects the synthetic generator
  TrajectoryLayout layout = TrajectoryLayout::native;
  std::optional<double> segment_length;
  double frame_rate_hz = 10.0;  ///< of the file; the generator has its own
  SyntheticConfig synthetic;
};

struct FilterSettings {
  int moving_average_window = 10;
  int fixed_lag = 20;
  double rho = 0.01;
};

struct ExperimentConfig {
  DataSource source;
  std::vector<Quantity> quantities{Quantity::speed, Quantity::headway};
  std::vector<double> penetrations{5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<FilterKind> filters{FilterKind::none, FilterKind::moving_average, FilterKind::kalman, FilterKind::rts};
  std::vector<PredictorKind> predictors{PredictorKind::lstm};
  std::size_t train_n = 7000;
  std::size_t test_n = 2800;
  Hyperparams hyper;
  std::uint64_t root_seed = 2024;
  int replicates = 1;
  SamplingMode sampling = SamplingMode::per_frame;
  FilterSettings filter;
  RmseMode rmse_mode = RmseMode::standard;
  std::size_t baseline_fit_window = 0;
  std::string output_dir = "cvflow-out";
  bool write_csv = true;
  bool write_svg = true;
  /// When false the timing columns are written as 0 so reports compare byte for byte.
  bool record_timing = true;
  bool save_models = false;
  int threads = 0;  ///< 0 = hardware concurrency
};

void validate(const ExperimentConfig& config);

/// Parses the JSON form; absent keys keep their defaults, unknown keys are errors.
ExperimentConfig config_from_json(std::string_view json_text);
std::string config_to_json(const ExperimentConfig& config);

TrajectoryDataset load_dataset(const DataSource& source);

/// Seeds keyed by cell identity, so adding grid cells leaves existing ones untouched.
///   sample: derive(root, "sample", quantity, penetration * 1000, replicate)
///   train:  derive(root, "train", quantity, predictor, replicate)
std::uint64_t sample_seed(std::uint64_t root, Quantity q, double penetration_pct, int replicate);
std::uint64_t train_seed(std::uint64_t root, Quantity q, PredictorKind p, int replicate);

/// The 100%-penetration aggregate. Metrics are computed only against this type.
class GroundTruth {
 public:
  explicit GroundTruth(TimeSeries full);

  const TimeSeries& series() const noexcept { return full_; }
  std::span<const double> window(std::size_t first, std::size_t count) const;

 private:
  TimeSeries full_;
};

struct FilteredSeries {
  TimeSeries series;
  std::optional<FilterParams> params;
  std::string note;
};

/// Applies one filter to the whole observed series. Kalman-type filters use a
/// random-walk model whose noise is fitted on the first `fit_length` values
/// against the ground truth; a constant input passes through unchanged.
FilteredSeries apply_filter(const TimeSeries& observed, const GroundTruth& truth, FilterKind kind,
                            const FilterSettings& settings, std::size_t fit_length);

struct Forecast {
  std::vector<double> predictions;  ///< one per test step
  Normalization normalization;      ///< fitted on the filtered training range
  double train_ms = 0.0;
  double infer_us_per_step = 0.0;
  std::string diagnostics;
  std::optional<RnnModel> model;
};

/// Trains on series[0, train_n) and predicts series[train_n, train_n + test_n)
/// one step ahead from observed history.
Forecast forecast(const TimeSeries& series, PredictorKind kind, const ExperimentConfig& config, std::uint64_t seed);

struct CellKey {
  Quantity quantity = Quantity::speed;
  double penetration_pct = 100.0;
  FilterKind filter = FilterKind::none;
  PredictorKind predictor = PredictorKind::lstm;
  int replicate = 0;

  friend auto operator<=>(const CellKey&, const CellKey&) = default;
};

struct CellResult {
  CellKey key;
  std::optional<MetricsRecord> metrics;
  std::optional<TTestResult> ttest;
  double rmse_norm = 0.0;
  double train_ms = 0.0;
  double infer_us_per_step = 0.0;
  std::string status = "ok";  ///< "ok" or "error: <message>"
  std::string diagnostics;
  std::vector<double> predictions;  ///< kept in memory for overlays, not written

  bool ok() const noexcept { return status == "ok"; }
};

/// Metrics of a forecast against the ground-truth test window.
CellResult score(const CellKey& key, const GroundTruth& truth, const Forecast& fc, const ExperimentConfig& config);

struct EvalReport {
  std::vector<CellResult> rows;  ///< sorted by key
  /// Ground-truth test window per quantity, for overlays.
  std::vector<std::pair<Quantity, std::vector<double>>> truth_test;
  bool any_error() const noexcept;
  std::size_t error_count() const noexcept;
};

using RowSink = std::function<void(const CellResult&)>;

/// Runs every (quantity, penetration, filter, predictor, replicate) cell on a
/// loaded dataset. Cell failures become error rows; `sink` sees each row as it
/// completes (calls are serialized).
EvalReport run_grid(const ExperimentConfig& config, const TrajectoryDataset& dataset, const RowSink& sink = {});

/// Loads the data source, runs the grid, appends rows to
/// `<output_dir>/report.csv.partial` as they finish, then writes the sorted
/// `report.csv`, the echoed config and the requested charts.
EvalReport run_experiment(const ExperimentConfig& config);

struct LatencyReport {
  int lag = 0;
  std::size_t steps = 0;
  double min_us = 0.0;
  double mean_us = 0.0;
  double max_us = 0.0;
  double budget_us = 1'000'000.0;
  bool pass = false;
};

struct ReplayOptions {
  int lag = 20;
  /// Sleep to the frame clock between steps; otherwise run as fast as possible.
  bool paced = false;
  double frame_rate_hz = 10.0;
};

/// Streams `series` one value at a time through a fixed-lag smoother and the
/// model, timing each step (filter update plus inference) on this thread.
LatencyReport replay_realtime(const RnnModel& model, const FilterParams& params, const TimeSeries& series,
                              const ReplayOptions& options = {});

enum class SweepParameter { neurons, epochs, batch_size, dropout_rate, learning_rate };
std::string_view to_string(SweepParameter p);
SweepParameter sweep_parameter_from_string(std::string_view s);

struct SweepConfig {
  SweepParameter parameter = SweepParameter::neurons;
  std::vector<double> candidates{25, 50, 100, 150};
  int trials = 30;
};

/// Trains `trials` LSTMs per candidate on the first quantity, penetration and
/// filter of `config`; the metric is the normalized RMSE.
SweepStats run_sweep(const ExperimentConfig& config, const SweepConfig& sweep, const TrajectoryDataset& dataset);

}  // namespace cvflow
