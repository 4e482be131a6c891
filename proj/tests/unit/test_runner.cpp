#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include <gtest/gtest.h>

#include "cvflow/report.hpp"
#include "cvflow/runner.hpp"

using namespace cvflow;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(const std::string& dir) {
  ExperimentConfig c;
  c.source.synthetic.n_frames = 420;
  c.source.synthetic.target_vehicle_count = 40;
  c.train_n = 300;
  c.test_n = 100;
  c.penetrations = {10, 100};
  c.filters = {FilterKind::none, FilterKind::rts};
  c.predictors = {PredictorKind::lstm, PredictorKind::hes};
  c.hyper.epochs = 2;
  c.hyper.neurons = 4;
  c.record_timing = false;
  c.threads = 1;
  c.output_dir = (fs::temp_directory_path() / dir).string();
  fs::remove_all(c.output_dir);
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST(Experiment, ConstantSeriesRegressionIsExact) {
  auto c = tiny_config("cvflow_test_constant");
  c.source.synthetic.speed_profile.waves.clear();
  c.source.synthetic.speed_profile.reversion_std_mps = 0.0;
  c.source.synthetic.per_vehicle_noise.std_mps = 0.0;
  c.quantities = {Quantity::speed};
  c.penetrations = {100};
  c.filters = {FilterKind::none};
  c.predictors = {PredictorKind::linear_regression};
  c.write_svg = false;
  const auto report = run_experiment(c);
  ASSERT_EQ(report.rows.size(), 1u);
  const auto& row = report.rows[0];
  ASSERT_TRUE(row.ok()) << row.status;
  EXPECT_NEAR(*row.metrics->mape_pct, 0.0, 1e-9);
  EXPECT_FALSE(row.ttest->significant_at_95);
}

TEST(Experiment, SameSeedGivesIdenticalReports) {
  auto a = tiny_config("cvflow_test_det_a");
  auto b = tiny_config("cvflow_test_det_b");
  a.replicates = b.replicates = 2;
  a.write_svg = b.write_svg = false;
  const auto ra = run_experiment(a);
  run_experiment(b);
  EXPECT_EQ(ra.rows.size(), 2u * 2u * 2u * 2u * 2u);
  EXPECT_FALSE(ra.any_error());
  EXPECT_EQ(slurp(fs::path(a.output_dir) / "report.csv"), slurp(fs::path(b.output_dir) / "report.csv"));
}

TEST(Experiment, AddingCellsLeavesExistingCellsUnchanged) {
  auto small = tiny_config("cvflow_test_cells_a");
  auto big = tiny_config("cvflow_test_cells_b");
  small.predictors = {PredictorKind::lstm};
  small.penetrations = {10};
  const auto dataset = load_dataset(small.source);
  const auto rs = run_grid(small, dataset);
  const auto rb = run_grid(big, dataset);
  for (const auto& row : rs.rows) {
    const auto it = std::find_if(rb.rows.begin(), rb.rows.end(), [&](const auto& r) { return r.key == row.key; });
    ASSERT_NE(it, rb.rows.end());
    EXPECT_EQ(format_report_row(*it, false), format_report_row(row, false));
  }
}

TEST(Experiment, SignificanceGridMatchesTheCsv) {
  auto c = tiny_config("cvflow_test_svg");
  const auto report = run_experiment(c);
  const auto svg = slurp(fs::path(c.output_dir) / "significance_grid.svg");
  const std::regex cell(
      R"re(data-significant="([^"]+)" data-quantity="([^"]+)" data-penetration="([^"]+)" data-filter="([^"]+)" data-predictor="([^"]+)" data-replicate="([^"]+)")re");
  std::size_t matched = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cell); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    const CellKey key{quantity_from_string(m[2].str()), std::stod(m[3].str()), filter_from_string(m[4].str()),
                      predictor_from_string(m[5].str()), std::stoi(m[6].str())};
    const auto row = std::find_if(report.rows.begin(), report.rows.end(), [&](const auto& r) { return r.key == key; });
    ASSERT_NE(row, report.rows.end());
    ASSERT_TRUE(row->ttest.has_value());
    EXPECT_EQ(m[1].str(), row->ttest->significant_at_95 ? "1" : "0");
    ++matched;
  }
  EXPECT_EQ(matched, report.rows.size());
}

TEST(Report, OneRowGivesHeaderAndOneLine) {
  EvalReport report;
  CellResult r;
  r.metrics = MetricsRecord{1.0, 0.5, 2.0, 10, false};
  r.ttest = TTestResult{0.3, 9.0, 0.77, false, false};
  report.rows.push_back(r);
  std::ostringstream out;
  write_report_csv(out, report);
  const auto text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.substr(0, kReportHeader.size()), kReportHeader);
}

TEST(Report, CsvRoundTrip) {
  EvalReport report;
  CellResult r;
  r.key = {Quantity::headway, 20.0, FilterKind::kalman, PredictorKind::gru, 1};
  r.metrics = MetricsRecord{1.25, 0.5, 2.0, 10, false};
  r.ttest = TTestResult{-2.5, 9.0, 0.03, true, false};
  r.rmse_norm = 0.0625;
  report.rows.push_back(r);
  CellResult e;
  e.status = "error: boom";
  report.rows.push_back(e);
  std::ostringstream out;
  write_report_csv(out, report, false);
  std::istringstream in(out.str());
  const auto back = read_report_csv(in);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].key, r.key);
  EXPECT_EQ(back.rows[0].metrics->rmse, 1.25);
  EXPECT_TRUE(back.rows[0].ttest->significant_at_95);
  EXPECT_EQ(back.rows[1].status, "error: boom");
  std::ostringstream again;
  write_report_csv(again, back, false);
  EXPECT_EQ(again.str(), out.str());
}

TEST(Report, CsvOnlyWritesNoSvg) {
  EvalReport report;
  CellResult r;
  r.metrics = MetricsRecord{1.0, 0.5, 2.0, 10, false};
  r.ttest = TTestResult{};
  report.rows.push_back(r);
  const auto dir = fs::temp_directory_path() / "cvflow_test_csv_only";
  fs::remove_all(dir);
  const auto written = emit_report(report, dir, {true, false, false});
  ASSERT_EQ(written.size(), 1u);
  for (const auto& entry : fs::directory_iterator(dir)) EXPECT_NE(entry.path().extension(), ".svg");
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig c;
  c.quantities = {Quantity::headway};
  c.penetrations = {5, 30};
  c.filters = {FilterKind::fixed_lag_rts};
  c.predictors = {PredictorKind::gru, PredictorKind::arima_auto};
  c.hyper.neurons = 64;
  c.root_seed = 99;
  c.filter.fixed_lag = 7;
  c.rmse_mode = RmseMode::root_sum_over_n;
  const auto text = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(text)), text);
}

TEST(Config, UnknownKeyIsRejected) {
  EXPECT_THROW(config_from_json(R"({"penetrations": [5], "epochz": 3})"), ContractError);
  EXPECT_THROW(config_from_json("{not json"), ParseError);
}

TEST(Config, AbsentKeysKeepDefaults) {
  const auto c = config_from_json(R"({"seeds": {"root": 5}})");
  EXPECT_EQ(c.root_seed, 5u);
  EXPECT_EQ(c.train_n, 7000u);
  EXPECT_EQ(c.hyper.epochs, 400);
}

TEST(Seeds, CellSeedsDependOnlyOnTheirKey) {
  EXPECT_EQ(sample_seed(1, Quantity::speed, 5.0, 0), sample_seed(1, Quantity::speed, 5.0, 0));
  EXPECT_NE(sample_seed(1, Quantity::speed, 5.0, 0), sample_seed(1, Quantity::speed, 10.0, 0));
  EXPECT_NE(sample_seed(1, Quantity::speed, 5.0, 0), sample_seed(1, Quantity::headway, 5.0, 0));
  EXPECT_NE(train_seed(1, Quantity::speed, PredictorKind::lstm, 0), train_seed(1, Quantity::speed, PredictorKind::lstm, 1));
}

TEST(GroundTruthGuard, PartialPenetrationIsRefused) {
  TimeSeries s;
  s.values = {1.0, 2.0};
  s.penetration_pct = 50.0;
  EXPECT_THROW(GroundTruth{s}, ContractError);
}

TEST(Replay, EmptySeriesIsRejected) {
  const RnnModel model{RnnWeights::glorot(Arch::lstm, 3, 1), Hyperparams{}, {0.0, 1.0}, {}, {}};
  FilterParams p;
  EXPECT_THROW(replay_realtime(model, p, TimeSeries{}), ContractError);
}

TEST(Replay, ReportsOrderedStatistics) {
  const RnnModel model{RnnWeights::glorot(Arch::lstm, 8, 1), Hyperparams{}, {0.0, 20.0}, {}, {}};
  FilterParams p;
  p.x0 = 10.0;
  TimeSeries s;
  for (int i = 0; i < 200; ++i) s.values.push_back(10.0 + 0.01 * i);
  for (int lag : {0, 20}) {
    const auto rep = replay_realtime(model, p, s, {lag, false, 10.0});
    EXPECT_EQ(rep.steps, s.values.size());
    EXPECT_LE(rep.min_us, rep.mean_us);
    EXPECT_LE(rep.mean_us, rep.max_us);
    EXPECT_TRUE(rep.pass);
    EXPECT_EQ(rep.lag, lag);
  }
}
