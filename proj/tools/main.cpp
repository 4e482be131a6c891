// cvflow command-line interface.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "cvflow/flowparams.hpp"
#include "cvflow/report.hpp"
#include "cvflow/runner.hpp"
#include "cvflow/trajectory.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw cvflow::IoError(fmt::format("cannot open {}", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw cvflow::IoError(fmt::format("cannot write {}", path.string()));
  return out;
}

/// Options shared by `run` and `sweep`: a config file plus field overrides.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string data, layout, output_dir;
  std::vector<std::string> quantities, filters, predictors, formats;
  std::vector<double> penetrations;
  std::optional<int> epochs, neurons, batch_size, lookback, replicates, threads;
  std::optional<double> dropout, lr;
  std::optional<std::uint64_t> root_seed;
  std::optional<std::size_t> train_n, test_n;
  bool no_timing = false;
  bool sum_over_n_rmse = false;
  bool save_models = false;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override any config field, e.g. --set hyperparams.epochs=50");
    app->add_option("--data", data, "trajectory file (default: synthetic generator)");
    app->add_option("--layout", layout, "trajectory layout: native or ngsim");
    app->add_option("-o,--output-dir", output_dir, "output directory");
    app->add_option("--quantities", quantities, "speed, headway")->delimiter(',');
    app->add_option("--penetrations", penetrations, "penetration percentages")->delimiter(',');
    app->add_option("--filters", filters, "none, moving_average, kalman, rts, fixed_lag_rts")->delimiter(',');
    app->add_option("--predictors", predictors, "lstm, gru, simple, linear_regression, arima_auto, hes")
        ->delimiter(',');
    app->add_option("--formats", formats, "csv, svg")->delimiter(',');
    app->add_option("--epochs", epochs);
    app->add_option("--neurons", neurons);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lookback", lookback);
    app->add_option("--dropout", dropout);
    app->add_option("--learning-rate", lr);
    app->add_option("--root-seed", root_seed);
    app->add_option("--replicates", replicates);
    app->add_option("--threads", threads, "worker threads (0 = all cores)");
    app->add_option("--train", train_n, "training split length");
    app->add_option("--test", test_n, "test split length");
    app->add_flag("--no-timing", no_timing, "write timing columns as 0 (byte-stable reports)");
    app->add_flag("--rmse-sum-over-n", sum_over_n_rmse, "RMSE as sqrt(sum e^2) / N");
    app->add_flag("--save-models", save_models, "write trained models and filter params under models/");
  }

  cvflow::ExperimentConfig build() const {
    json j = json::parse(config_path.empty() ? cvflow::config_to_json({}) : slurp(config_path));
    // Re-serialize through the typed config so defaults are filled in.
    j = json::parse(cvflow::config_to_json(cvflow::config_from_json(j.dump())));
    auto names = [](const std::vector<std::string>& v) { return json(v); };
    if (!data.empty()) j["data"]["path"] = data;
    if (!layout.empty()) j["data"]["layout"] = layout;
    if (!output_dir.empty()) j["output_dir"] = output_dir;
    if (!quantities.empty()) j["quantities"] = names(quantities);
    if (!filters.empty()) j["filters"] = names(filters);
    if (!predictors.empty()) j["predictors"] = names(predictors);
    if (!formats.empty()) j["formats"] = names(formats);
    if (!penetrations.empty()) j["penetrations"] = penetrations;
    if (epochs) j["hyperparams"]["epochs"] = *epochs;
    if (neurons) j["hyperparams"]["neurons"] = *neurons;
    if (batch_size) j["hyperparams"]["batch_size"] = *batch_size;
    if (lookback) j["hyperparams"]["lookback"] = *lookback;
    if (dropout) j["hyperparams"]["dropout_rate"] = *dropout;
    if (lr) j["hyperparams"]["learning_rate"] = *lr;
    if (root_seed) j["seeds"]["root"] = *root_seed;
    if (replicates) j["seeds"]["replicates"] = *replicates;
    if (threads) j["threads"] = *threads;
    if (train_n) j["split"]["train"] = *train_n;
    if (test_n) j["split"]["test"] = *test_n;
    if (no_timing) j["record_timing"] = false;
    if (sum_over_n_rmse) j["rmse_mode"] = "root_sum_over_n";
    if (save_models) j["save_models"] = true;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw cvflow::ContractError(fmt::format("--set expects key=value, got '{}'", s));
      std::string pointer = "/" + s.substr(0, eq);
      for (auto& c : pointer) {
        if (c == '.') c = '/';
      }
      const std::string raw = s.substr(eq + 1);
      json value = json::parse(raw, nullptr, false);
      if (value.is_discarded()) value = raw;
      j[json::json_pointer(pointer)] = value;
    }
    return cvflow::config_from_json(j.dump());
  }
};

void print_report_summary(const cvflow::EvalReport& report) {
  for (const auto& r : report.rows) {
    if (!r.ok()) {
      std::cerr << fmt::format("{} {:g}% {}+{} r{}: {}\n", to_string(r.key.quantity), r.key.penetration_pct,
                               to_string(r.key.predictor), to_string(r.key.filter), r.key.replicate, r.status);
      continue;
    }
    std::cout << fmt::format("{:<8} {:>5g}% {:<15} {:<18} r{}  rmse={:<10.5g} mape={:<8.4g}% p={:.3g}{}\n",
                             to_string(r.key.quantity), r.key.penetration_pct, to_string(r.key.filter),
                             to_string(r.key.predictor), r.key.replicate, r.metrics->rmse,
                             r.metrics->mape_pct.value_or(std::nan("")), r.ttest->p_value,
                             r.ttest->significant_at_95 ? " *" : "");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cvflow: traffic-flow estimation and prediction from low-penetration connected-vehicle data"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "write a synthetic trajectory dataset");
  cvflow::SyntheticConfig sim_cfg;
  std::string sim_out = "synthetic.csv";
  std::string sim_config;
  sim->add_option("-c,--config", sim_config, "experiment config whose data.synthetic block is used")
      ->check(CLI::ExistingFile);
  sim->add_option("--frames", sim_cfg.n_frames);
  sim->add_option("--seed", sim_cfg.rng_seed);
  sim->add_option("--vehicles", sim_cfg.target_vehicle_count, "mean vehicles on the segment");
  sim->add_option("--lanes", sim_cfg.lanes);
  sim->add_option("--segment-length", sim_cfg.segment_length, "meters");
  sim->add_option("-o,--output", sim_out);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "validate a trajectory file and optionally convert it");
  std::string in_path, in_layout = "native", in_out, in_series_dir;
  std::optional<double> in_length;
  double in_rate = 10.0;
  double in_pen = 100.0;
  std::uint64_t in_seed = 0;
  ingest->add_option("input", in_path, "trajectory CSV")->required()->check(CLI::ExistingFile);
  ingest->add_option("--layout", in_layout, "native or ngsim");
  ingest->add_option("--segment-length", in_length, "meters (default: largest position)");
  ingest->add_option("--frame-rate", in_rate);
  ingest->add_option("-o,--output", in_out, "write the native layout here");
  ingest->add_option("--series-dir", in_series_dir, "write aggregated speed and headway series here");
  ingest->add_option("--penetration", in_pen, "penetration for --series-dir");
  ingest->add_option("--seed", in_seed, "sampling seed for --series-dir");

  // run
  auto* run = app.add_subcommand("run", "run the experiment grid");
  ConfigOptions run_opts;
  run_opts.attach(run);

  // replay
  auto* replay = app.add_subcommand("replay", "stream a series through fixed-lag RTS and a model, timing each step");
  std::string rp_model, rp_series, rp_params, rp_out;
  std::vector<int> rp_lags{0, 20};
  std::optional<double> rp_q, rp_r;
  bool rp_paced = false;
  replay->add_option("--model", rp_model, "model file written by `run --save-models`");
  replay->add_option("--series", rp_series, "series CSV to stream")->required()->check(CLI::ExistingFile);
  replay->add_option("--filter-params", rp_params, "JSON filter params (default: fitted on the series)");
  replay->add_option("--lags", rp_lags, "fixed lags to measure")->delimiter(',');
  replay->add_option("--q", rp_q, "process noise override");
  replay->add_option("--r", rp_r, "measurement noise override");
  replay->add_flag("--paced", rp_paced, "sleep to the frame clock between steps");
  replay->add_option("-o,--output", rp_out, "latency CSV");

  // sweep
  auto* sw = app.add_subcommand("sweep", "hyperparameter box-whisker sweep");
  ConfigOptions sw_opts;
  sw_opts.attach(sw);
  std::string sw_param = "neurons";
  std::vector<double> sw_candidates{25, 50, 100, 150};
  int sw_trials = 30;
  sw->add_option("--parameter", sw_param, "neurons, epochs, batch_size, dropout_rate, learning_rate");
  sw->add_option("--candidates", sw_candidates)->delimiter(',');
  sw->add_option("--trials", sw_trials);

  // report
  auto* rep = app.add_subcommand("report", "re-render charts from a report CSV");
  std::string rep_in, rep_dir = ".";
  std::vector<std::string> rep_formats{"svg"};
  rep->add_option("input", rep_in, "report.csv")->required()->check(CLI::ExistingFile);
  rep->add_option("-o,--output-dir", rep_dir);
  rep->add_option("--formats", rep_formats)->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      if (!sim_config.empty()) {
        auto base = cvflow::config_from_json(slurp(sim_config)).source.synthetic;
        // Flags given on the command line still win.
        if (sim->count("--frames")) base.n_frames = sim_cfg.n_frames;
        if (sim->count("--seed")) base.rng_seed = sim_cfg.rng_seed;
        if (sim->count("--vehicles")) base.target_vehicle_count = sim_cfg.target_vehicle_count;
        if (sim->count("--lanes")) base.lanes = sim_cfg.lanes;
        if (sim->count("--segment-length")) base.segment_length = sim_cfg.segment_length;
        sim_cfg = base;
      }
      const auto ds = cvflow::generate_synthetic(sim_cfg);
      auto out = open_out(sim_out);
      cvflow::write_trajectory_csv(out, ds);
      std::cout << fmt::format("wrote {} records, {} vehicles, {} frames to {}\n", ds.records().size(),
                               ds.vehicle_count(), ds.frame_count(), sim_out);
      return 0;
    }

    if (*ingest) {
      const auto layout = in_layout == "ngsim" ? cvflow::TrajectoryLayout::ngsim : cvflow::TrajectoryLayout::native;
      if (in_layout != "ngsim" && in_layout != "native") throw cvflow::ContractError("layout must be native or ngsim");
      std::ifstream in(in_path);
      const auto ds = cvflow::parse_trajectory_file(in, layout, in_length, in_rate);
      const auto headways = cvflow::compute_space_headways(ds);
      std::cout << fmt::format("ok: {} records, {} vehicles, frames {}..{}, {} headway entries\n",
                               ds.records().size(), ds.vehicle_count(), ds.first_frame(), ds.last_frame(),
                               headways.size());
      if (!in_out.empty()) {
        auto out = open_out(in_out);
        cvflow::write_trajectory_csv(out, ds);
      }
      if (!in_series_dir.empty()) {
        for (auto q : {cvflow::Quantity::speed, cvflow::Quantity::headway}) {
          const auto s = cvflow::aggregate(ds, headways, q, in_pen, in_seed);
          auto out = open_out(fs::path(in_series_dir) / fmt::format("{}_{:g}.csv", to_string(q), in_pen));
          cvflow::write_series_csv(out, s, ds.first_frame());
        }
      }
      return 0;
    }

    if (*run) {
      const auto config = run_opts.build();
      const auto report = cvflow::run_experiment(config);
      print_report_summary(report);
      std::cout << fmt::format("{} cells, {} errors; outputs in {}\n", report.rows.size(), report.error_count(),
                               config.output_dir);
      return report.any_error() ? 2 : 0;
    }

    if (*replay) {
      if (rp_model.empty()) throw cvflow::ContractError("replay needs a trained model (--model)");
      std::ifstream mf(rp_model, std::ios::binary);
      if (!mf) throw cvflow::ContractError(fmt::format("model file {} is missing", rp_model));
      const auto model = cvflow::load_model(mf);
      std::ifstream sf(rp_series);
      const auto series = cvflow::read_series_csv(sf);
      cvflow::FilterParams params;
      if (!rp_params.empty()) {
        const json pj = json::parse(slurp(rp_params));
        params.a = pj.value("a", 1.0);
        params.b = pj.value("b", 0.0);
        params.h = pj.value("h", 1.0);
        params.q = pj.value("q", 0.0);
        params.r = pj.value("r", 1.0);
        params.x0 = pj.value("x0", series.values.empty() ? 0.0 : series.values.front());
        params.p0 = pj.value("p0", params.r);
      } else {
        cvflow::NoiseFitOptions opts;
        opts.q = rp_q;
        opts.r = rp_r;
        params = cvflow::fit_noise_params(series, opts);
      }
      if (rp_q) params.q = *rp_q;
      if (rp_r) params.r = *rp_r;
      std::vector<cvflow::LatencyReport> reports;
      for (int lag : rp_lags) {
        cvflow::ReplayOptions o;
        o.lag = lag;
        o.paced = rp_paced;
        o.frame_rate_hz = series.frame_rate_hz;
        reports.push_back(cvflow::replay_realtime(model, params, series, o));
        const auto& r = reports.back();
        std::cout << fmt::format("lag {:>3}: {} steps, min {:.1f} us, mean {:.1f} us, max {:.1f} us, budget {:g} us: {}\n",
                                 r.lag, r.steps, r.min_us, r.mean_us, r.max_us, r.budget_us,
                                 r.pass ? "PASS" : "FAIL");
      }
      if (!rp_out.empty()) {
        auto out = open_out(rp_out);
        cvflow::write_latency_csv(out, reports);
      }
      bool ok = true;
      for (const auto& r : reports) ok = ok && r.pass;
      return ok ? 0 : 3;
    }

    if (*sw) {
      const auto config = sw_opts.build();
      cvflow::SweepConfig sc;
      sc.parameter = cvflow::sweep_parameter_from_string(sw_param);
      sc.candidates = sw_candidates;
      sc.trials = sw_trials;
      const auto ds = cvflow::load_dataset(config.source);
      const auto stats = cvflow::run_sweep(config, sc, ds);
      const fs::path dir(config.output_dir);
      {
        auto out = open_out(dir / "sweep.csv");
        cvflow::write_sweep_csv(out, stats);
      }
      if (config.write_svg) {
        auto out = open_out(dir / "sweep.svg");
        out << cvflow::sweep_svg(stats, sw_param);
      }
      for (const auto& c : stats.candidates) {
        std::cout << fmt::format("{:>10g}: median {:.5g}  q1 {:.5g}  q3 {:.5g}  min {:.5g}  max {:.5g}\n", c.candidate,
                                 c.median, c.q1, c.q3, c.min, c.max);
      }
      std::cout << fmt::format("selected {} = {:g}\n", sw_param, stats.selected().candidate);
      return 0;
    }

    if (*rep) {
      std::ifstream in(rep_in);
      const auto report = cvflow::read_report_csv(in);
      cvflow::EmitOptions o;
      o.csv = std::find(rep_formats.begin(), rep_formats.end(), "csv") != rep_formats.end();
      o.svg = std::find(rep_formats.begin(), rep_formats.end(), "svg") != rep_formats.end();
      for (const auto& p : cvflow::emit_report(report, rep_dir, o)) std::cout << p.string() << '\n';
      return 0;
    }
  } catch (const cvflow::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
