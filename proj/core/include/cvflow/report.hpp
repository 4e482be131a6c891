#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cvflow/evaluation.hpp"
#include "cvflow/runner.hpp"

namespace cvflow {

/// Column list of the report CSV (schema version 1).
inline constexpr std::string_view kReportHeader =
    "quantity,penetration_pct,filter,predictor,replicate,rmse_norm,rmse,mae,mape_pct,t_stat,p_value,significant,"
    "train_ms,infer_us_per_step,status";

std::string format_report_row(const CellResult& row, bool record_timing = true);
void write_report_csv(std::ostream& out, const EvalReport& report, bool record_timing = true);
/// Inverse of write_report_csv (predictions are not stored).
EvalReport read_report_csv(std::istream& in);

struct EmitOptions {
  bool csv = true;
  bool svg = true;
  bool record_timing = true;
};

/// Writes report.csv and, when requested, the charts:
/// mape_vs_penetration_<q>.svg, rmse_vs_penetration_<q>.svg, overlay_<q>.svg
/// (when predictions are in memory) and significance_grid.svg.
/// Returns the paths written.
std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir,
                                               const EmitOptions& options = {});

void write_sweep_csv(std::ostream& out, const SweepStats& stats);
std::string sweep_svg(const SweepStats& stats, std::string_view parameter);

void write_latency_csv(std::ostream& out, const std::vector<LatencyReport>& reports);

}  // namespace cvflow
