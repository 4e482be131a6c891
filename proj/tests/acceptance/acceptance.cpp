#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Dense>
#include <fmt/format.h>

#include "cvflow/cvflow.hpp"

using namespace cvflow;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(bool pass, int id, std::string_view name, const std::string& detail) {
  if (!pass) ++failures;
  fmt::print("{} C{} {}: {}\n", pass ? "PASS" : "FAIL", id, name, detail);
  std::fflush(stdout);
}

void skip(int id, std::string_view name, const std::string& detail) {
  fmt::print("SKIP C{} {}: {}\n", id, name, detail);
  std::fflush(stdout);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// C1: RTS against joint-Gaussian conditioning

struct Conditioned {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
};

// x_t = a x_{t-1} + b u_t + w_t with x_0 ~ N(x0, p0); z_t = h x_t + v_t.
// Conditions (x_1..x_N) on z_1..z_m.
Conditioned condition(const FilterParams& p, const std::vector<double>& z, std::size_t m) {
  const auto N = static_cast<Eigen::Index>(z.size());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(N, N + 1);
  Eigen::VectorXd mu(N);
  double prev = p.x0;
  for (Eigen::Index t = 0; t < N; ++t) {
    prev = p.a * prev + p.b * p.control(static_cast<std::size_t>(t));
    mu[t] = prev;
    L(t, 0) = std::pow(p.a, static_cast<double>(t + 1));
    for (Eigen::Index k = 0; k <= t; ++k) L(t, k + 1) = std::pow(p.a, static_cast<double>(t - k));
  }
  Eigen::VectorXd d = Eigen::VectorXd::Constant(N + 1, p.q);
  d[0] = p.p0;
  const Eigen::MatrixXd Sx = L * d.asDiagonal() * L.transpose();
  const auto M = static_cast<Eigen::Index>(m);
  const Eigen::MatrixXd Sxz = p.h * Sx.leftCols(M);
  const Eigen::MatrixXd Sz = p.h * p.h * Sx.topLeftCorner(M, M) + p.r * Eigen::MatrixXd::Identity(M, M);
  Eigen::VectorXd innov(M);
  for (Eigen::Index t = 0; t < M; ++t) innov[t] = z[static_cast<std::size_t>(t)] - p.h * mu[t];
  const auto ldlt = Sz.ldlt();
  Conditioned c;
  c.mean = mu + Sxz * ldlt.solve(innov);
  c.var = (Sx - Sxz * ldlt.solve(Sxz.transpose())).diagonal();
  return c;
}

void criterion_rts_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  double worst = 0.0;
  int cases = 0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t N = 1 + static_cast<std::size_t>(rep % 5);
    FilterParams p;
    p.a = 0.5 + 0.7 * (uni(rng) + 1.0) / 2.0;
    p.b = uni(rng);
    p.h = 0.5 + (uni(rng) + 1.0);
    p.q = 0.05 + (uni(rng) + 1.0);
    p.r = 0.1 + (uni(rng) + 1.0);
    p.x0 = 3.0 * uni(rng);
    p.p0 = 0.2 + (uni(rng) + 1.0);
    p.u.resize(N);
    for (auto& v : p.u) v = uni(rng);
    std::vector<double> z(N);
    for (auto& v : z) v = 4.0 * uni(rng);

    const auto fwd = kalman_forward(z, p);
    const auto sm = rts_smooth(fwd, p);
    const auto full = condition(p, z, N);
    auto rel = [](double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-8); };
    for (std::size_t t = 0; t < N; ++t) {
      const auto i = static_cast<Eigen::Index>(t);
      worst = std::max({worst, rel(sm.smooth_x[t], full.mean[i]), rel(sm.smooth_P[t], full.var[i])});
      const auto causal = condition(p, z, t + 1);
      worst = std::max({worst, rel(fwd.post_x[t], causal.mean[i]), rel(fwd.post_P[t], causal.var[i])});
    }
    ++cases;
  }
  const double secs = seconds_since(t0);
  verdict(worst < 1e-10 && secs < 1.0, 1, "rts-oracle",
          fmt::format("{} series (N<=5), max rel err {:.3g} (< 1e-10), {:.3f} s (< 1 s)", cases, worst, secs));
}

// ---------------------------------------------------------------------------
// C2: filter ordering on seeded noisy series

void criterion_filter_ordering() {
  int mse_ok = 0;
  int cov_ok = 0;
  const int runs = 25;
  for (int s = 0; s < runs; ++s) {
    std::mt19937_64 rng(derive_seed(7, {static_cast<std::uint64_t>(s)}));
    std::normal_distribution<double> gauss;
    FilterParams p;
    p.q = 0.02;
    p.r = 1.0;
    const std::size_t N = 500;
    std::vector<double> truth(N), z(N);
    double x = 10.0;
    for (std::size_t t = 0; t < N; ++t) {
      x += std::sqrt(p.q) * gauss(rng);
      truth[t] = x;
      z[t] = x + std::sqrt(p.r) * gauss(rng);
    }
    p.x0 = z[0];
    p.p0 = p.r;
    const auto fwd = kalman_forward(z, p);
    const auto sm = rts_smooth(fwd, p);
    auto mse = [&](const std::vector<double>& v) {
      double acc = 0.0;
      for (std::size_t t = 0; t < N; ++t) acc += (v[t] - truth[t]) * (v[t] - truth[t]);
      return acc / static_cast<double>(N);
    };
    if (mse(sm.smooth_x) <= mse(fwd.post_x) && mse(fwd.post_x) <= mse(z)) ++mse_ok;
    bool ordered = true;
    for (std::size_t t = 0; t < N; ++t) {
      const double slack = 1e-12 * fwd.prior_P[t];
      ordered = ordered && sm.smooth_P[t] <= fwd.post_P[t] + slack && fwd.post_P[t] <= fwd.prior_P[t] + slack;
    }
    if (ordered) ++cov_ok;
  }
  verdict(mse_ok == runs && cov_ok == runs, 2, "filter-ordering",
          fmt::format("MSE(rts) <= MSE(kalman) <= MSE(raw) in {}/{} runs; P smooth <= post <= prior at every step in "
                      "{}/{} runs",
                      mse_ok, runs, cov_ok, runs));
}

// ---------------------------------------------------------------------------
// C3: gradient check

void criterion_gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string per_arch;
  for (Arch arch : {Arch::lstm, Arch::gru, Arch::simple}) {
    std::mt19937_64 rng(derive_seed(11, {static_cast<std::uint64_t>(arch)}));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    auto w = RnnWeights::glorot(arch, 4, derive_seed(12, {static_cast<std::uint64_t>(arch)}));
    for (double& b : w.bias()) b = uni(rng) - 0.5;
    w.readout_bias() = uni(rng) - 0.5;
    std::vector<TrainingPair> batch(6);
    for (auto& pair : batch) {
      pair.window.resize(5);
      for (double& v : pair.window) v = uni(rng);
      pair.target = uni(rng);
    }
    const double err = gradient_check(w, batch, 1e-6);
    worst = std::max(worst, err);
    per_arch += fmt::format("{} {:.2g}; ", to_string(arch), err);
  }
  const double secs = seconds_since(t0);
  verdict(worst < 1e-4 && secs < 10.0, 3, "gradient-check",
          fmt::format("{}max {:.2g} (< 1e-4), {:.2f} s (< 10 s)", per_arch, worst, secs));
}

// ---------------------------------------------------------------------------
// C4-C8: experiment grid over root seeds

struct Grid {
  // (seed, quantity, penetration, filter, predictor) -> row
  std::map<std::tuple<std::uint64_t, Quantity, double, FilterKind, PredictorKind>, CellResult> rows;

  const CellResult* find(std::uint64_t s, Quantity q, double pen, FilterKind f, PredictorKind p) const {
    const auto it = rows.find({s, q, pen, f, p});
    return it == rows.end() ? nullptr : &it->second;
  }
};

struct Profile {
  int epochs = 100;
  int neurons = 100;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

const std::vector<double> kPenetrations{5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
const std::vector<Quantity> kQuantities{Quantity::speed, Quantity::headway};

void run_cells(Grid& grid, const TrajectoryDataset& data, std::uint64_t seed, const Profile& profile,
               std::vector<double> pens, std::vector<FilterKind> filters, std::vector<PredictorKind> predictors) {
  ExperimentConfig c;
  c.root_seed = seed;
  c.penetrations = std::move(pens);
  c.filters = std::move(filters);
  c.predictors = std::move(predictors);
  c.hyper.epochs = profile.epochs;
  c.hyper.neurons = profile.neurons;
  c.write_csv = false;
  c.write_svg = false;
  c.threads = 1;
  const auto report = run_grid(c, data);
  for (const auto& r : report.rows) {
    if (!r.ok()) fmt::print("  cell error: {} {}% {} {}: {}\n", to_string(r.key.quantity), r.key.penetration_pct,
                            to_string(r.key.filter), to_string(r.key.predictor), r.status);
    grid.rows[{seed, r.key.quantity, r.key.penetration_pct, r.key.filter, r.key.predictor}] = r;
  }
}

double mape_of(const CellResult* r) {
  return r && r->metrics && r->metrics->mape_pct ? *r->metrics->mape_pct : std::nan("");
}
double rmse_of(const CellResult* r) { return r && r->metrics ? r->metrics->rmse : std::nan(""); }

void criteria_experiments(const TrajectoryDataset& data, const Profile& profile, const std::set<int>& only,
                          const std::string& dump) {
  auto wanted = [&](int c) { return only.empty() || only.count(c); };
  Grid grid;
  const auto& seeds = profile.seeds;
  const auto L = PredictorKind::lstm;

  // C4 cells first so their runtime is measured on their own.
  double c4_secs = 0.0;
  if (wanted(4) || wanted(6) || wanted(5) || wanted(7) || wanted(8)) {
    const auto t0 = Clock::now();
    for (auto s : seeds) run_cells(grid, data, s, profile, {5}, {FilterKind::none, FilterKind::rts}, {L});
    c4_secs = seconds_since(t0);
  }
  if (wanted(4)) {
    std::string detail;
    bool pass = c4_secs < 1800.0;
    for (Quantity q : kQuantities) {
      std::vector<double> raw, rts;
      for (auto s : seeds) {
        raw.push_back(mape_of(grid.find(s, q, 5, FilterKind::none, L)));
        rts.push_back(mape_of(grid.find(s, q, 5, FilterKind::rts, L)));
      }
      const double ratio = median(rts) / median(raw);
      pass = pass && ratio <= 0.5;
      detail += fmt::format("{}: MAPE lstm+rts {:.3g}% vs lstm {:.3g}% (ratio {:.3f} <= 0.5); ", to_string(q),
                            median(rts), median(raw), ratio);
    }
    verdict(pass, 4, "headline-improvement",
            detail + fmt::format("{} seeds, {:.0f} s (< 1800 s)", seeds.size(), c4_secs));
  }

  if (wanted(5) || wanted(6) || wanted(8)) {
    std::vector<double> rest(kPenetrations.begin() + 1, kPenetrations.end());
    for (auto s : seeds) run_cells(grid, data, s, profile, rest, {FilterKind::rts}, {L});
  }
  if (wanted(5)) {
    std::string detail;
    bool pass = true;
    for (Quantity q : kQuantities) {
      std::vector<double> rhos;
      for (auto s : seeds) {
        std::vector<double> m;
        for (double p : kPenetrations) m.push_back(mape_of(grid.find(s, q, p, FilterKind::rts, L)));
        rhos.push_back(spearman(kPenetrations, m));
      }
      const double rho = median(rhos);
      pass = pass && rho < -0.8;
      detail += fmt::format("{}: median Spearman(MAPE, penetration) {:.3f} (< -0.8); ", to_string(q), rho);
    }
    verdict(pass, 5, "penetration-monotonicity", detail);
  }
  if (wanted(6)) {
    std::string detail;
    bool pass = true;
    for (Quantity q : kQuantities) {
      int full_sig = 0;
      int low_sig = 0;
      std::vector<double> p_full, p_low;
      for (auto s : seeds) {
        const auto* full = grid.find(s, q, 100, FilterKind::rts, L);
        const auto* low = grid.find(s, q, 5, FilterKind::none, L);
        if (full && full->ttest) full_sig += full->ttest->significant_at_95, p_full.push_back(full->ttest->p_value);
        if (low && low->ttest) low_sig += low->ttest->significant_at_95, p_low.push_back(low->ttest->p_value);
      }
      const int n = static_cast<int>(seeds.size());
      pass = pass && 2 * full_sig < n && 2 * low_sig > n;
      detail += fmt::format("{}: 100% lstm+rts significant in {}/{} (median p {:.3g}), 5% lstm significant in {}/{} "
                            "(median p {:.3g}); ",
                            to_string(q), full_sig, n, p_full.empty() ? std::nan("") : median(p_full), low_sig, n,
                            p_low.empty() ? std::nan("") : median(p_low));
    }
    verdict(pass, 6, "significance-pattern", detail + "median verdict must be not significant / significant");
  }

  if (wanted(7)) {
    for (auto s : seeds) run_cells(grid, data, s, profile, {5, 10}, {FilterKind::moving_average, FilterKind::kalman}, {L});
    for (auto s : seeds) {
      if (!grid.find(s, Quantity::speed, 10, FilterKind::rts, L)) run_cells(grid, data, s, profile, {10}, {FilterKind::rts}, {L});
    }
    std::string detail;
    bool pass = true;
    for (Quantity q : kQuantities) {
      for (double p : {5.0, 10.0}) {
        std::vector<double> r, k, m;
        for (auto s : seeds) {
          r.push_back(rmse_of(grid.find(s, q, p, FilterKind::rts, L)));
          k.push_back(rmse_of(grid.find(s, q, p, FilterKind::kalman, L)));
          m.push_back(rmse_of(grid.find(s, q, p, FilterKind::moving_average, L)));
        }
        const bool ok = median(r) <= median(k) && median(k) <= median(m);
        pass = pass && ok;
        detail += fmt::format("{} {:g}%: rts {:.4g} <= kalman {:.4g} <= ma {:.4g}{}; ", to_string(q), p, median(r),
                              median(k), median(m), ok ? "" : " (violated)");
      }
    }
    verdict(pass, 7, "filter-ranking", detail + "median RMSE");
  }

  if (wanted(8)) {
    const std::vector<PredictorKind> baselines{PredictorKind::linear_regression, PredictorKind::arima_auto,
                                               PredictorKind::hes};
    for (auto s : seeds) run_cells(grid, data, s, profile, {5, 10, 20, 30}, {FilterKind::rts}, baselines);
    std::string detail;
    bool pass = true;
    for (Quantity q : kQuantities) {
      for (double p : {5.0, 10.0, 20.0, 30.0}) {
        std::vector<double> lstm;
        for (auto s : seeds) lstm.push_back(rmse_of(grid.find(s, q, p, FilterKind::rts, L)));
        std::string worse;
        for (auto b : baselines) {
          std::vector<double> v;
          for (auto s : seeds) v.push_back(rmse_of(grid.find(s, q, p, FilterKind::rts, b)));
          if (!(median(lstm) <= median(v))) worse += fmt::format(" {} {:.4g}", to_string(b), median(v));
        }
        pass = pass && worse.empty();
        detail += fmt::format("{} {:g}%: lstm {:.4g}{}; ", to_string(q), p, median(lstm),
                              worse.empty() ? std::string(" best") : " beaten by" + worse);
      }
    }
    verdict(pass, 8, "baseline-comparison", detail + "median RMSE, all +rts");
  }

  if (!dump.empty()) {
    std::ofstream out(dump);
    out << "seed," << kReportHeader << '\n';
    for (const auto& [key, row] : grid.rows) out << std::get<0>(key) << ',' << format_report_row(row) << '\n';
  }
}

// ---------------------------------------------------------------------------
// C9: latency

void criterion_latency(const TrajectoryDataset& data) {
  const GroundTruth truth(aggregate(data, Quantity::speed, 100.0, 0).slice(0, 9800));
  const auto observed = aggregate(data, Quantity::speed, 5.0, 17).slice(0, 9800);
  NoiseFitOptions opt;
  opt.reference = &truth.series();
  opt.fit_length = 7000;
  const FilterParams params = fit_noise_params(observed, opt);
  const auto split = prepare_supervised(fixed_lag_smooth(observed, params, 20), 1, 7000, 2800);
  Hyperparams hp;
  hp.epochs = 1;
  hp.neurons = 100;
  hp.rng_seed = 5;
  const RnnModel model = train_rnn(split.train, Arch::lstm, hp, split.normalization);
  ReplayOptions ro;
  ro.lag = 20;
  const auto rep = replay_realtime(model, params, observed.slice(7000, 2800), ro);
  const double max_ms = rep.max_us / 1000.0;
  verdict(max_ms < 100.0, 9, "latency",
          fmt::format("{} steps, fixed-lag {} + LSTM(100): max {:.3f} ms, mean {:.3f} ms (< 100 ms)", rep.steps, ro.lag,
                      max_ms, rep.mean_us / 1000.0));
}

// ---------------------------------------------------------------------------
// C10: real dataset, when present

void criterion_real_data(const std::set<int>& only) {
  const char* path = std::getenv("CVFLOW_NGSIM_I80");
  if (!path || !*path) {
    skip(10, "real-dataset", "CVFLOW_NGSIM_I80 not set; dataset absent");
    return;
  }
  if (!only.empty() && !only.count(10)) return;
  ExperimentConfig c;
  c.source.path = path;
  c.source.layout = TrajectoryLayout::ngsim;
  c.penetrations = {5};
  c.filters = {FilterKind::rts};
  c.predictors = {PredictorKind::lstm};
  c.threads = 1;
  const auto data = load_dataset(c.source);
  const auto report = run_grid(c, data);
  double speed = std::nan(""), headway = std::nan("");
  for (const auto& r : report.rows) {
    (r.key.quantity == Quantity::speed ? speed : headway) = mape_of(&r);
  }
  const bool pass = std::abs(speed - 4.99) <= 2.5 && std::abs(headway - 9.02) <= 3.0;
  verdict(pass, 10, "real-dataset",
          fmt::format("speed MAPE {:.3g}% (4.99 +- 2.5), headway MAPE {:.3g}% (9.02 +- 3)", speed, headway));
}

// ---------------------------------------------------------------------------
// C11: statistical self-tests

void criterion_statistics() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss;
  int rejections = 0;
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) {
    std::vector<double> a(40), b(40);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = 5.0 + gauss(rng);
      b[i] = a[i] + gauss(rng);
    }
    rejections += paired_t_test(a, b).significant_at_95;
  }
  const double size = static_cast<double>(rejections) / reps;

  std::vector<double> noise(5000);
  for (double& v : noise) v = gauss(rng);
  const double qq = describe_noise(noise).qq_pearson_r;

  std::vector<double> ar(5000);
  double x = 0.0;
  for (double& v : ar) v = x = 0.8 * x + gauss(rng);
  const double phi = fit_arima(ar, {1, 0, 0}).phi.at(0);

  const bool pass = std::abs(size - 0.05) <= 0.02 && qq > 0.995 && std::abs(phi - 0.8) <= 0.05;
  verdict(pass, 11, "statistical-self-tests",
          fmt::format("t-test size {:.3f} (0.05 +- 0.02, {} reps); Q-Q r {:.5f} (> 0.995); AR(1) phi {:.4f} (0.8 +- "
                      "0.05)",
                      size, reps, qq, phi));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cvflow acceptance checks"};
  Profile profile;
  std::vector<int> only_list;
  std::string dump;
  app.add_option("--only", only_list, "run only these criteria");
  app.add_option("--seeds", profile.seeds, "root seeds for the experiment criteria");
  app.add_option("--epochs", profile.epochs, "LSTM epochs for the experiment criteria");
  app.add_option("--neurons", profile.neurons, "LSTM hidden size for the experiment criteria");
  app.add_option("--dump", dump, "write the experiment rows to this CSV");
  CLI11_PARSE(app, argc, argv);
  const std::set<int> only(only_list.begin(), only_list.end());
  auto wanted = [&](int c) { return only.empty() || only.count(c); };

  fmt::print("profile: LSTM hidden {}, {} epochs, {} root seeds\n", profile.neurons, profile.epochs,
             profile.seeds.size());
  if (wanted(1)) criterion_rts_oracle();
  if (wanted(2)) criterion_filter_ordering();
  if (wanted(3)) criterion_gradients();
  if (wanted(11)) criterion_statistics();
  const bool need_data = wanted(4) || wanted(5) || wanted(6) || wanted(7) || wanted(8) || wanted(9);
  if (need_data) {
    const auto data = load_dataset(DataSource{});
    if (wanted(9)) criterion_latency(data);
    criteria_experiments(data, profile, only, dump);
  }
  criterion_real_data(only);
  fmt::print("{} failed\n", failures);
  return failures == 0 ? 0 : 1;
}
