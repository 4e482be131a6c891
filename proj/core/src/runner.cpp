#include "cvflow/runner.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>
#include <json.hpp>

#include "cvflow/report.hpp"

namespace cvflow {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_us(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Names

std::string_view to_string(FilterKind kind) {
  switch (kind) {
    case FilterKind::none: return "none";
    case FilterKind::moving_average: return "moving_average";
    case FilterKind::kalman: return "kalman";
    case FilterKind::rts: return "rts";
    case FilterKind::fixed_lag_rts: return "fixed_lag_rts";
  }
  return "?";
}

std::string_view to_string(PredictorKind kind) {
  switch (kind) {
    case PredictorKind::lstm: return "lstm";
    case PredictorKind::gru: return "gru";
    case PredictorKind::simple: return "simple";
    case PredictorKind::linear_regression: return "linear_regression";
    case PredictorKind::arima_auto: return "arima_auto";
    case PredictorKind::hes: return "hes";
  }
  return "?";
}

FilterKind filter_from_string(std::string_view s) {
  for (auto k : {FilterKind::none, FilterKind::moving_average, FilterKind::kalman, FilterKind::rts,
                 FilterKind::fixed_lag_rts}) {
    if (s == to_string(k)) return k;
  }
  throw ContractError(fmt::format("unknown filter '{}'", s));
}

PredictorKind predictor_from_string(std::string_view s) {
  for (auto k : {PredictorKind::lstm, PredictorKind::gru, PredictorKind::simple, PredictorKind::linear_regression,
                 PredictorKind::arima_auto, PredictorKind::hes}) {
    if (s == to_string(k)) return k;
  }
  throw ContractError(fmt::format("unknown predictor '{}'", s));
}

bool is_recurrent(PredictorKind kind) noexcept {
  return kind == PredictorKind::lstm || kind == PredictorKind::gru || kind == PredictorKind::simple;
}

std::string_view to_string(SweepParameter p) {
  switch (p) {
    case SweepParameter::neurons: return "neurons";
    case SweepParameter::epochs: return "epochs";
    case SweepParameter::batch_size: return "batch_size";
    case SweepParameter::dropout_rate: return "dropout_rate";
    case SweepParameter::learning_rate: return "learning_rate";
  }
  return "?";
}

SweepParameter sweep_parameter_from_string(std::string_view s) {
  for (auto p : {SweepParameter::neurons, SweepParameter::epochs, SweepParameter::batch_size,
                 SweepParameter::dropout_rate, SweepParameter::learning_rate}) {
    if (s == to_string(p)) return p;
  }
  throw ContractError(fmt::format("unknown sweep parameter '{}'", s));
}

// ---------------------------------------------------------------------------
// Configuration

void validate(const ExperimentConfig& c) {
  if (c.quantities.empty() || c.penetrations.empty() || c.filters.empty() || c.predictors.empty()) {
    throw ContractError("config: quantities, penetrations, filters and predictors must be non-empty");
  }
  for (double p : c.penetrations) {
    if (!(p > 0.0 && p <= 100.0)) throw ContractError(fmt::format("config: penetration {} outside (0, 100]", p));
  }
  if (c.replicates < 1) throw ContractError("config: replicates must be >= 1");
  if (c.test_n < 2) throw ContractError("config: test split needs at least 2 values");
  if (c.train_n <= static_cast<std::size_t>(std::max(c.hyper.lookback, 1)) + 1) {
    throw ContractError("config: training split is too short");
  }
  validate(c.hyper);
  if (c.filter.moving_average_window < 1) throw ContractError("config: moving_average_window must be >= 1");
  if (c.filter.fixed_lag < 0) throw ContractError("config: fixed_lag must be >= 0");
  if (!(c.filter.rho > 0.0)) throw ContractError("config: rho must be > 0");
  if (c.threads < 0) throw ContractError("config: threads must be >= 0");
  if (c.source.path.empty()) {
    validate(c.source.synthetic);
    if (static_cast<std::size_t>(c.source.synthetic.n_frames) < c.train_n + c.test_n) {
      throw ContractError(fmt::format("config: split {}+{} does not fit {} synthetic frames", c.train_n, c.test_n,
                                      c.source.synthetic.n_frames));
    }
  }
}

namespace {

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ContractError(fmt::format("config: '{}' must be an object", where));
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ContractError(fmt::format("config: unknown key '{}' in {}", key, where));
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ContractError(fmt::format("config: bad value for '{}': {}", key, e.what()));
  }
}

template <class E, class F>
void read_enum_list(const json& j, const char* key, std::vector<E>& out, F parse) {
  if (!j.contains(key)) return;
  std::vector<std::string> names;
  read(j, key, names);
  out.clear();
  for (const auto& n : names) out.push_back(parse(n));
}

}  // namespace

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(0, fmt::format("config is not valid JSON: {}", e.what()));
  }
  ExperimentConfig c;
  check_keys(j,
             {"data", "quantities", "penetrations", "filters", "predictors", "split", "hyperparams", "seeds",
              "sampling", "filter_settings", "rmse_mode", "baseline_fit_window", "output_dir", "formats",
              "record_timing", "save_models", "threads"},
             "config");

  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"path", "layout", "segment_length_m", "frame_rate_hz", "synthetic"}, "data");
    read(d, "path", c.source.path);
    if (d.contains("layout")) {
      std::string layout;
      read(d, "layout", layout);
      if (layout == "native") c.source.layout = TrajectoryLayout::native;
      else if (layout == "ngsim") c.source.layout = TrajectoryLayout::ngsim;
      else throw ContractError(fmt::format("config: unknown layout '{}'", layout));
    }
    if (d.contains("segment_length_m")) {
      double v = 0;
      read(d, "segment_length_m", v);
      c.source.segment_length = v;
    }
    read(d, "frame_rate_hz", c.source.frame_rate_hz);
    if (d.contains("synthetic")) {
      const auto& s = d["synthetic"];
      auto& sc = c.source.synthetic;
      check_keys(s,
                 {"n_frames", "segment_length_m", "frame_rate_hz", "lanes", "target_vehicle_count",
                  "vehicle_length_mean_m", "vehicle_length_std_m", "jam_gap_m", "seed", "speed_profile",
                  "vehicle_noise"},
                 "data.synthetic");
      read(s, "n_frames", sc.n_frames);
      read(s, "segment_length_m", sc.segment_length);
      read(s, "frame_rate_hz", sc.frame_rate_hz);
      read(s, "lanes", sc.lanes);
      read(s, "target_vehicle_count", sc.target_vehicle_count);
      read(s, "vehicle_length_mean_m", sc.vehicle_length_mean);
      read(s, "vehicle_length_std_m", sc.vehicle_length_std);
      read(s, "jam_gap_m", sc.jam_gap);
      read(s, "seed", sc.rng_seed);
      if (s.contains("speed_profile")) {
        const auto& p = s["speed_profile"];
        check_keys(p, {"base_mps", "waves", "reversion_std_mps", "reversion_time_s"}, "speed_profile");
        read(p, "base_mps", sc.speed_profile.base_mps);
        read(p, "reversion_std_mps", sc.speed_profile.reversion_std_mps);
        read(p, "reversion_time_s", sc.speed_profile.reversion_time_s);
        if (p.contains("waves")) {
          sc.speed_profile.waves.clear();
          for (const auto& w : p["waves"]) {
            check_keys(w, {"amplitude_mps", "period_s", "phase_rad"}, "speed_profile.waves[]");
            SpeedWave wave;
            read(w, "amplitude_mps", wave.amplitude_mps);
            read(w, "period_s", wave.period_s);
            read(w, "phase_rad", wave.phase_rad);
            sc.speed_profile.waves.push_back(wave);
          }
        }
      }
      if (s.contains("vehicle_noise")) {
        const auto& n = s["vehicle_noise"];
        check_keys(n, {"ar_coefficient", "std_mps"}, "vehicle_noise");
        read(n, "ar_coefficient", sc.per_vehicle_noise.ar_coefficient);
        read(n, "std_mps", sc.per_vehicle_noise.std_mps);
      }
    }
  }

  read_enum_list(j, "quantities", c.quantities, quantity_from_string);
  read(j, "penetrations", c.penetrations);
  read_enum_list(j, "filters", c.filters, filter_from_string);
  read_enum_list(j, "predictors", c.predictors, predictor_from_string);
  if (j.contains("split")) {
    check_keys(j["split"], {"train", "test"}, "split");
    read(j["split"], "train", c.train_n);
    read(j["split"], "test", c.test_n);
  }
  if (j.contains("hyperparams")) {
    const auto& h = j["hyperparams"];
    check_keys(h,
               {"epochs", "neurons", "batch_size", "dropout_rate", "learning_rate", "lookback", "adam_beta1",
                "adam_beta2", "adam_eps", "stateful"},
               "hyperparams");
    read(h, "epochs", c.hyper.epochs);
    read(h, "neurons", c.hyper.neurons);
    read(h, "batch_size", c.hyper.batch_size);
    read(h, "dropout_rate", c.hyper.dropout_rate);
    read(h, "learning_rate", c.hyper.learning_rate);
    read(h, "lookback", c.hyper.lookback);
    read(h, "adam_beta1", c.hyper.adam_beta1);
    read(h, "adam_beta2", c.hyper.adam_beta2);
    read(h, "adam_eps", c.hyper.adam_eps);
    read(h, "stateful", c.hyper.stateful);
  }
  if (j.contains("seeds")) {
    check_keys(j["seeds"], {"root", "replicates"}, "seeds");
    read(j["seeds"], "root", c.root_seed);
    read(j["seeds"], "replicates", c.replicates);
  }
  if (j.contains("sampling")) {
    std::string s;
    read(j, "sampling", s);
    if (s == "per_frame") c.sampling = SamplingMode::per_frame;
    else if (s == "persistent_fleet") c.sampling = SamplingMode::persistent_fleet;
    else throw ContractError(fmt::format("config: unknown sampling mode '{}'", s));
  }
  if (j.contains("filter_settings")) {
    const auto& f = j["filter_settings"];
    check_keys(f, {"moving_average_window", "fixed_lag", "rho"}, "filter_settings");
    read(f, "moving_average_window", c.filter.moving_average_window);
    read(f, "fixed_lag", c.filter.fixed_lag);
    read(f, "rho", c.filter.rho);
  }
  if (j.contains("rmse_mode")) {
    std::string s;
    read(j, "rmse_mode", s);
    if (s == "standard") c.rmse_mode = RmseMode::standard;
    else if (s == "root_sum_over_n") c.rmse_mode = RmseMode::root_sum_over_n;
    else throw ContractError(fmt::format("config: unknown rmse_mode '{}'", s));
  }
  read(j, "baseline_fit_window", c.baseline_fit_window);
  read(j, "output_dir", c.output_dir);
  if (j.contains("formats")) {
    std::vector<std::string> formats;
    read(j, "formats", formats);
    c.write_csv = c.write_svg = false;
    for (const auto& f : formats) {
      if (f == "csv") c.write_csv = true;
      else if (f == "svg") c.write_svg = true;
      else throw ContractError(fmt::format("config: unknown format '{}'", f));
    }
  }
  read(j, "record_timing", c.record_timing);
  read(j, "save_models", c.save_models);
  read(j, "threads", c.threads);
  validate(c);
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  const auto& sc = c.source.synthetic;
  json waves = json::array();
  for (const auto& w : sc.speed_profile.waves) {
    waves.push_back({{"amplitude_mps", w.amplitude_mps}, {"period_s", w.period_s}, {"phase_rad", w.phase_rad}});
  }
  json data = {{"path", c.source.path},
               {"layout", c.source.layout == TrajectoryLayout::ngsim ? "ngsim" : "native"},
               {"frame_rate_hz", c.source.frame_rate_hz},
               {"synthetic",
                {{"n_frames", sc.n_frames},
                 {"segment_length_m", sc.segment_length},
                 {"frame_rate_hz", sc.frame_rate_hz},
                 {"lanes", sc.lanes},
                 {"target_vehicle_count", sc.target_vehicle_count},
                 {"vehicle_length_mean_m", sc.vehicle_length_mean},
                 {"vehicle_length_std_m", sc.vehicle_length_std},
                 {"jam_gap_m", sc.jam_gap},
                 {"seed", sc.rng_seed},
                 {"speed_profile",
                  {{"base_mps", sc.speed_profile.base_mps},
                   {"waves", waves},
                   {"reversion_std_mps", sc.speed_profile.reversion_std_mps},
                   {"reversion_time_s", sc.speed_profile.reversion_time_s}}},
                 {"vehicle_noise",
                  {{"ar_coefficient", sc.per_vehicle_noise.ar_coefficient},
                   {"std_mps", sc.per_vehicle_noise.std_mps}}}}}};
  if (c.source.segment_length) data["segment_length_m"] = *c.source.segment_length;

  auto names = [](const auto& v) {
    json a = json::array();
    for (const auto& x : v) a.push_back(std::string(to_string(x)));
    return a;
  };
  json formats = json::array();
  if (c.write_csv) formats.push_back("csv");
  if (c.write_svg) formats.push_back("svg");
  json j = {
      {"data", data},
      {"quantities", names(c.quantities)},
      {"penetrations", c.penetrations},
      {"filters", names(c.filters)},
      {"predictors", names(c.predictors)},
      {"split", {{"train", c.train_n}, {"test", c.test_n}}},
      {"hyperparams",
       {{"epochs", c.hyper.epochs},
        {"neurons", c.hyper.neurons},
        {"batch_size", c.hyper.batch_size},
        {"dropout_rate", c.hyper.dropout_rate},
        {"learning_rate", c.hyper.learning_rate},
        {"lookback", c.hyper.lookback},
        {"adam_beta1", c.hyper.adam_beta1},
        {"adam_beta2", c.hyper.adam_beta2},
        {"adam_eps", c.hyper.adam_eps},
        {"stateful", c.hyper.stateful}}},
      {"seeds", {{"root", c.root_seed}, {"replicates", c.replicates}}},
      {"sampling", c.sampling == SamplingMode::per_frame ? "per_frame" : "persistent_fleet"},
      {"filter_settings",
       {{"moving_average_window", c.filter.moving_average_window},
        {"fixed_lag", c.filter.fixed_lag},
        {"rho", c.filter.rho}}},
      {"rmse_mode", c.rmse_mode == RmseMode::standard ? "standard" : "root_sum_over_n"},
      {"baseline_fit_window", c.baseline_fit_window},
      {"output_dir", c.output_dir},
      {"formats", formats},
      {"record_timing", c.record_timing},
      {"save_models", c.save_models},
      {"threads", c.threads},
  };
  return j.dump(2) + "\n";
}

TrajectoryDataset load_dataset(const DataSource& source) {
  if (source.path.empty()) return generate_synthetic(source.synthetic);
  std::ifstream in(source.path);
  if (!in) throw IoError(fmt::format("cannot open trajectory file {}", source.path));
  return parse_trajectory_file(in, source.layout, source.segment_length, source.frame_rate_hz);
}

std::uint64_t sample_seed(std::uint64_t root, Quantity q, double penetration_pct, int replicate) {
  return derive_seed(root, {label_key("sample"), label_key(to_string(q)),
                            static_cast<std::uint64_t>(std::llround(penetration_pct * 1000.0)),
                            static_cast<std::uint64_t>(replicate)});
}

std::uint64_t train_seed(std::uint64_t root, Quantity q, PredictorKind p, int replicate) {
  return derive_seed(root, {label_key("train"), label_key(to_string(q)), label_key(to_string(p)),
                            static_cast<std::uint64_t>(replicate)});
}

// ---------------------------------------------------------------------------
// Pipeline stages

GroundTruth::GroundTruth(TimeSeries full) : full_(std::move(full)) {
  if (full_.penetration_pct != 100.0) {
    throw ContractError("ground truth must be the 100%-penetration aggregate");
  }
  validate(full_);
}

std::span<const double> GroundTruth::window(std::size_t first, std::size_t count) const {
  if (first + count > full_.size()) throw ContractError("ground-truth window exceeds the series");
  return full_.view().subspan(first, count);
}

FilteredSeries apply_filter(const TimeSeries& observed, const GroundTruth& truth, FilterKind kind,
                            const FilterSettings& settings, std::size_t fit_length) {
  FilteredSeries out;
  switch (kind) {
    case FilterKind::none:
      out.series = observed;
      return out;
    case FilterKind::moving_average:
      out.series = moving_average(observed, settings.moving_average_window);
      return out;
    case FilterKind::kalman:
    case FilterKind::rts:
    case FilterKind::fixed_lag_rts:
      break;
  }
  NoiseFitOptions opts;
  opts.reference = &truth.series();
  opts.rho = settings.rho;
  opts.fit_length = fit_length;
  FilterParams params;
  try {
    params = fit_noise_params(observed, opts);
  } catch (const DegenerateInputError& e) {
    out.series = observed;
    out.note = fmt::format("filter skipped: {}", e.what());
    return out;
  }
  if (kind == FilterKind::kalman) {
    out.series = observed.with_values(kalman_forward(observed, params).post_x);
  } else if (kind == FilterKind::rts) {
    out.series = observed.with_values(rts_smooth(kalman_forward(observed, params), params).smooth_x);
  } else {
    out.series = fixed_lag_smooth(observed, params, settings.fixed_lag);
  }
  out.params = std::move(params);
  return out;
}

Forecast forecast(const TimeSeries& series, PredictorKind kind, const ExperimentConfig& config, std::uint64_t seed) {
  const std::size_t train_n = config.train_n;
  const std::size_t test_n = config.test_n;
  if (series.size() < train_n + test_n) {
    throw ContractError(fmt::format("series of {} values is shorter than the split {}+{}", series.size(), train_n,
                                    test_n));
  }
  Forecast fc;
  if (is_recurrent(kind)) {
    Hyperparams hp = config.hyper;
    hp.rng_seed = seed;
    const auto split = prepare_supervised(series, hp.lookback, train_n, test_n);
    const Arch arch = kind == PredictorKind::lstm ? Arch::lstm : kind == PredictorKind::gru ? Arch::gru : Arch::simple;
    const auto t0 = Clock::now();
    RnnModel model = train_rnn(split.train, arch, hp, split.normalization);
    const auto t1 = Clock::now();
    const TimeSeries pred = predict_series(model, series.slice(0, train_n + test_n));
    const auto t2 = Clock::now();
    fc.predictions.assign(pred.values.end() - static_cast<std::ptrdiff_t>(test_n), pred.values.end());
    fc.normalization = split.normalization;
    fc.train_ms = elapsed_us(t0, t1) / 1000.0;
    fc.infer_us_per_step = elapsed_us(t1, t2) / static_cast<double>(pred.size());
    fc.diagnostics = fmt::format("final train MAE {:.6g}", model.train_mae.back());
    fc.model = std::move(model);
    return fc;
  }

  const TimeSeries train = series.slice(0, train_n);
  const TimeSeries test = series.slice(train_n, test_n);
  BaselineSpec spec;
  switch (kind) {
    case PredictorKind::linear_regression: spec = BaselineSpec::linear_regression(); break;
    case PredictorKind::arima_auto: spec = BaselineSpec::arima_auto(); break;
    case PredictorKind::hes: spec = BaselineSpec::hes(); break;
    default: break;
  }
  spec.fit_window = config.baseline_fit_window;
  const auto t0 = Clock::now();
  BaselineResult res = fit_predict_baseline(train, test, spec);
  const auto t1 = Clock::now();
  fc.predictions = std::move(res.predictions);
  fc.normalization = Normalization::fit(train.view());
  fc.train_ms = elapsed_us(t0, t1) / 1000.0;
  fc.diagnostics = std::move(res.diagnostics);
  return fc;
}

CellResult score(const CellKey& key, const GroundTruth& truth, const Forecast& fc, const ExperimentConfig& config) {
  const auto actual = truth.window(config.train_n, config.test_n);
  if (fc.predictions.size() != actual.size()) {
    throw ContractError(fmt::format("forecast has {} values, expected {}", fc.predictions.size(), actual.size()));
  }
  CellResult r;
  r.key = key;
  r.metrics = compute_metrics(actual, fc.predictions, {config.rmse_mode, true, false});
  std::vector<double> a_norm(actual.size()), p_norm(actual.size());
  for (std::size_t i = 0; i < actual.size(); ++i) {
    a_norm[i] = fc.normalization.normalize(actual[i]);
    p_norm[i] = fc.normalization.normalize(fc.predictions[i]);
  }
  r.rmse_norm = compute_metrics(a_norm, p_norm, {config.rmse_mode, false, true}).rmse;
  r.ttest = paired_t_test(actual, fc.predictions);
  r.train_ms = fc.train_ms;
  r.infer_us_per_step = fc.infer_us_per_step;
  r.diagnostics = fc.diagnostics;
  r.predictions = fc.predictions;
  return r;
}

bool EvalReport::any_error() const noexcept { return error_count() > 0; }

std::size_t EvalReport::error_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok(); }));
}

// ---------------------------------------------------------------------------
// Grid

namespace {

struct Task {
  Quantity quantity;
  double penetration;
  int replicate;
};

std::string model_stem(const CellKey& k) {
  return fmt::format("{}_{:g}_{}_{}_r{}", to_string(k.quantity), k.penetration_pct, to_string(k.filter),
                     to_string(k.predictor), k.replicate);
}

template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  unsigned workers = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
}

}  // namespace

EvalReport run_grid(const ExperimentConfig& config, const TrajectoryDataset& dataset, const RowSink& sink) {
  validate(config);
  if (dataset.frame_count() < config.train_n + config.test_n) {
    throw ContractError(fmt::format("dataset has {} frames; the split needs {}", dataset.frame_count(),
                                    config.train_n + config.test_n));
  }
  const std::size_t n_frames = config.train_n + config.test_n;

  std::optional<HeadwayTable> headways;
  if (std::find(config.quantities.begin(), config.quantities.end(), Quantity::headway) != config.quantities.end()) {
    headways = compute_space_headways(dataset);
  }
  const HeadwayTable empty({}, dataset.first_frame(), dataset.frame_count());
  auto table = [&](Quantity q) -> const HeadwayTable& { return q == Quantity::headway ? *headways : empty; };

  EvalReport report;
  std::vector<GroundTruth> truths;
  for (Quantity q : config.quantities) {
    TimeSeries full = aggregate(dataset, table(q), q, 100.0, 0, SamplingMode::per_frame).slice(0, n_frames);
    report.truth_test.emplace_back(q, std::vector<double>(full.values.end() - static_cast<std::ptrdiff_t>(config.test_n),
                                                          full.values.end()));
    truths.emplace_back(std::move(full));
  }

  std::vector<Task> tasks;
  for (std::size_t qi = 0; qi < config.quantities.size(); ++qi) {
    for (int rep = 0; rep < config.replicates; ++rep) {
      for (double pen : config.penetrations) tasks.push_back({config.quantities[qi], pen, rep});
    }
  }

  const std::filesystem::path model_dir = std::filesystem::path(config.output_dir) / "models";
  if (config.save_models) std::filesystem::create_directories(model_dir);

  std::mutex mu;
  auto emit = [&](CellResult r) {
    std::lock_guard lock(mu);
    if (sink) sink(r);
    report.rows.push_back(std::move(r));
  };
  auto fail = [&](const CellKey& key, std::string_view what) {
    CellResult r;
    r.key = key;
    r.status = fmt::format("error: {}", what);
    emit(std::move(r));
  };

  parallel_for(tasks.size(), config.threads, [&](std::size_t ti) {
    const Task& task = tasks[ti];
    const auto qi = static_cast<std::size_t>(
        std::find(config.quantities.begin(), config.quantities.end(), task.quantity) - config.quantities.begin());
    const GroundTruth& truth = truths[qi];
    auto key_for = [&](FilterKind f, PredictorKind p) {
      return CellKey{task.quantity, task.penetration, f, p, task.replicate};
    };

    TimeSeries observed;
    try {
      observed = aggregate(dataset, table(task.quantity), task.quantity, task.penetration,
                           sample_seed(config.root_seed, task.quantity, task.penetration, task.replicate),
                           config.sampling)
                     .slice(0, n_frames);
    } catch (const std::exception& e) {
      for (auto f : config.filters) {
        for (auto p : config.predictors) fail(key_for(f, p), e.what());
      }
      return;
    }

    for (FilterKind f : config.filters) {
      FilteredSeries filtered;
      try {
        filtered = apply_filter(observed, truth, f, config.filter, config.train_n);
      } catch (const std::exception& e) {
        for (auto p : config.predictors) fail(key_for(f, p), e.what());
        continue;
      }
      for (PredictorKind p : config.predictors) {
        const CellKey key = key_for(f, p);
        try {
          const Forecast fc =
              forecast(filtered.series, p, config, train_seed(config.root_seed, task.quantity, p, task.replicate));
          CellResult r = score(key, truth, fc, config);
          if (!filtered.note.empty()) r.diagnostics = filtered.note + "; " + r.diagnostics;
          if (config.save_models && fc.model) {
            std::ofstream out(model_dir / (model_stem(key) + ".bin"), std::ios::binary);
            save_model(out, *fc.model);
            if (filtered.params) {
              std::ofstream pj(model_dir / (model_stem(key) + ".filter.json"));
              pj << json{{"a", filtered.params->a}, {"b", filtered.params->b}, {"h", filtered.params->h},
                         {"q", filtered.params->q}, {"r", filtered.params->r}, {"x0", filtered.params->x0},
                         {"p0", filtered.params->p0}}
                        .dump(2)
                 << '\n';
            }
          }
          emit(std::move(r));
        } catch (const std::exception& e) {
          fail(key, e.what());
        }
      }
    }
  });

  std::sort(report.rows.begin(), report.rows.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return report;
}

EvalReport run_experiment(const ExperimentConfig& config) {
  validate(config);
  const std::filesystem::path dir(config.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create output directory {}: {}", dir.string(), ec.message()));

  const TrajectoryDataset dataset = load_dataset(config.source);
  const auto partial_path = dir / "report.csv.partial";
  std::ofstream partial(partial_path, std::ios::trunc);
  if (!partial) throw IoError(fmt::format("cannot write {}", partial_path.string()));
  partial << kReportHeader << '\n' << std::flush;

  EvalReport report = run_grid(config, dataset, [&](const CellResult& r) {
    partial << format_report_row(r, config.record_timing) << '\n' << std::flush;
  });
  partial.close();

  {
    std::ofstream cfg(dir / "config.json");
    cfg << config_to_json(config);
  }
  if (config.write_csv || config.write_svg) {
    emit_report(report, dir, {config.write_csv, config.write_svg, config.record_timing});
  }
  if (config.write_csv) std::filesystem::remove(partial_path, ec);
  return report;
}

// ---------------------------------------------------------------------------
// Replay

LatencyReport replay_realtime(const RnnModel& model, const FilterParams& params, const TimeSeries& series,
                              const ReplayOptions& options) {
  if (series.values.empty()) throw ContractError("replay: test series is empty");
  if (options.paced && !(options.frame_rate_hz > 0.0)) throw ContractError("replay: frame rate must be positive");
  FixedLagSmoother smoother(params, options.lag);
  StreamingPredictor predictor(model);

  LatencyReport rep;
  rep.lag = options.lag;
  rep.min_us = std::numeric_limits<double>::infinity();
  double total = 0.0;
  volatile double sink = 0.0;
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(
      options.frame_rate_hz > 0.0 ? 1.0 / options.frame_rate_hz : 0.0));
  const auto start = Clock::now();
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto t0 = Clock::now();
    if (auto estimate = smoother.push(series.values[i])) {
      if (auto y = predictor.push(*estimate)) sink = *y;
    }
    const double us = elapsed_us(t0, Clock::now());
    rep.min_us = std::min(rep.min_us, us);
    rep.max_us = std::max(rep.max_us, us);
    total += us;
    if (options.paced) std::this_thread::sleep_until(start + period * static_cast<long>(i + 1));
  }
  (void)sink;
  rep.steps = series.size();
  rep.mean_us = total / static_cast<double>(rep.steps);
  rep.pass = rep.max_us < rep.budget_us;
  return rep;
}

// ---------------------------------------------------------------------------
// Sweep

SweepStats run_sweep(const ExperimentConfig& config, const SweepConfig& sweep_config, const TrajectoryDataset& dataset) {
  validate(config);
  if (sweep_config.candidates.empty()) throw ContractError("sweep: no candidates");
  if (sweep_config.trials < 1) throw ContractError("sweep: trials must be >= 1");
  const Quantity q = config.quantities.front();
  const double pen = config.penetrations.front();
  const FilterKind f = config.filters.front();
  const std::size_t n_frames = config.train_n + config.test_n;

  const HeadwayTable table = q == Quantity::headway ? compute_space_headways(dataset)
                                                    : HeadwayTable({}, dataset.first_frame(), dataset.frame_count());
  const GroundTruth truth(aggregate(dataset, table, q, 100.0, 0).slice(0, n_frames));
  const TimeSeries observed =
      aggregate(dataset, table, q, pen, sample_seed(config.root_seed, q, pen, 0), config.sampling).slice(0, n_frames);
  const TimeSeries filtered = apply_filter(observed, truth, f, config.filter, config.train_n).series;

  std::vector<SweepTrials> trials(sweep_config.candidates.size());
  for (std::size_t c = 0; c < trials.size(); ++c) {
    trials[c].candidate = sweep_config.candidates[c];
    trials[c].metric.assign(static_cast<std::size_t>(sweep_config.trials), 0.0);
  }
  const std::size_t jobs = trials.size() * static_cast<std::size_t>(sweep_config.trials);
  parallel_for(jobs, config.threads, [&](std::size_t job) {
    const std::size_t c = job / static_cast<std::size_t>(sweep_config.trials);
    const std::size_t t = job % static_cast<std::size_t>(sweep_config.trials);
    ExperimentConfig trial = config;
    const double v = sweep_config.candidates[c];
    switch (sweep_config.parameter) {
      case SweepParameter::neurons: trial.hyper.neurons = static_cast<int>(std::lround(v)); break;
      case SweepParameter::epochs: trial.hyper.epochs = static_cast<int>(std::lround(v)); break;
      case SweepParameter::batch_size: trial.hyper.batch_size = static_cast<int>(std::lround(v)); break;
      case SweepParameter::dropout_rate: trial.hyper.dropout_rate = v; break;
      case SweepParameter::learning_rate: trial.hyper.learning_rate = v; break;
    }
    const std::uint64_t seed = derive_seed(config.root_seed, {label_key("sweep"), label_key(to_string(sweep_config.parameter)),
                                                              std::bit_cast<std::uint64_t>(v), t});
    const Forecast fc = forecast(filtered, PredictorKind::lstm, trial, seed);
    trials[c].metric[t] = score(CellKey{q, pen, f, PredictorKind::lstm, static_cast<int>(t)}, truth, fc, trial).rmse_norm;
  });
  return sweep(std::move(trials));
}

}  // namespace cvflow
