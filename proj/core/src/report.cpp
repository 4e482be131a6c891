#include "cvflow/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "cvflow/svg.hpp"

namespace cvflow {

namespace {

std::string num(double v) { return fmt::format("{:.10g}", v); }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  if (s.empty()) return std::nan("");
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ParseError(line, fmt::format("trailing characters in '{}'", s));
    return v;
  } catch (const std::logic_error&) {
    throw ParseError(line, fmt::format("'{}' is not a number", s));
  }
}

std::string pen_label(double p) { return fmt::format("{:g}%", p); }

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << content;
  if (!out) throw IoError(fmt::format("failed writing {}", path.string()));
}

}  // namespace

std::string format_report_row(const CellResult& r, bool record_timing) {
  const auto& k = r.key;
  std::string status = r.status;
  std::replace_if(status.begin(), status.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, ';');
  std::string metrics = ",,,,,,";
  if (r.metrics && r.ttest) {
    metrics = fmt::format("{},{},{},{},{},{},{}", num(r.rmse_norm), num(r.metrics->rmse), num(r.metrics->mae),
                          r.metrics->mape_pct ? num(*r.metrics->mape_pct) : "", num(r.ttest->t_stat),
                          num(r.ttest->p_value), r.ttest->significant_at_95 ? 1 : 0);
  }
  return fmt::format("{},{:g},{},{},{},{},{},{},{}", to_string(k.quantity), k.penetration_pct, to_string(k.filter),
                     to_string(k.predictor), k.replicate, metrics, num(record_timing ? r.train_ms : 0.0),
                     num(record_timing ? r.infer_us_per_step : 0.0), status);
}

void write_report_csv(std::ostream& out, const EvalReport& report, bool record_timing) {
  out << kReportHeader << '\n';
  for (const auto& row : report.rows) out << format_report_row(row, record_timing) << '\n';
}

EvalReport read_report_csv(std::istream& in) {
  EvalReport report;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header) {
      if (line != kReportHeader) throw ParseError(line_no, "unexpected report header");
      header = true;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 15) throw ParseError(line_no, fmt::format("expected 15 columns, got {}", f.size()));
    CellResult r;
    try {
      r.key.quantity = quantity_from_string(f[0]);
      r.key.filter = filter_from_string(f[2]);
      r.key.predictor = predictor_from_string(f[3]);
    } catch (const ContractError& e) {
      throw ParseError(line_no, e.what());
    }
    r.key.penetration_pct = parse_double(f[1], line_no);
    r.key.replicate = static_cast<int>(parse_double(f[4], line_no));
    r.status = f[14];
    if (!f[6].empty()) {
      MetricsRecord m;
      m.rmse = parse_double(f[6], line_no);
      m.mae = parse_double(f[7], line_no);
      if (!f[8].empty()) m.mape_pct = parse_double(f[8], line_no);
      r.metrics = m;
      r.rmse_norm = parse_double(f[5], line_no);
      TTestResult t;
      t.t_stat = parse_double(f[9], line_no);
      t.p_value = parse_double(f[10], line_no);
      t.significant_at_95 = f[11] == "1";
      t.infinite_t = std::isinf(t.t_stat);
      r.ttest = t;
    }
    r.train_ms = parse_double(f[12], line_no);
    r.infer_us_per_step = parse_double(f[13], line_no);
    report.rows.push_back(std::move(r));
  }
  if (!header) throw ParseError(line_no, "empty report");
  return report;
}

std::vector<std::filesystem::path> emit_report(const EvalReport& report, const std::filesystem::path& dir,
                                               const EmitOptions& options) {
  if (report.rows.empty()) throw ContractError("emit_report: report has no rows");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  std::vector<std::filesystem::path> written;

  if (options.csv) {
    std::ostringstream csv;
    write_report_csv(csv, report, options.record_timing);
    written.push_back(dir / "report.csv");
    write_file(written.back(), csv.str());
  }
  if (!options.svg) return written;

  std::vector<Quantity> quantities;
  for (const auto& r : report.rows) {
    if (std::find(quantities.begin(), quantities.end(), r.key.quantity) == quantities.end()) {
      quantities.push_back(r.key.quantity);
    }
  }

  for (Quantity q : quantities) {
    // Mean over replicates of each (filter, predictor) curve.
    std::map<std::pair<FilterKind, PredictorKind>, std::map<double, std::vector<const CellResult*>>> curves;
    for (const auto& r : report.rows) {
      if (r.key.quantity == q && r.metrics) curves[{r.key.filter, r.key.predictor}][r.key.penetration_pct].push_back(&r);
    }
    auto chart = [&](const char* metric, auto value) {
      std::vector<svg::LineSeries> series;
      for (const auto& [fp, by_pen] : curves) {
        svg::LineSeries s;
        s.label = fmt::format("{}+{}", to_string(fp.second), to_string(fp.first));
        for (const auto& [pen, rows] : by_pen) {
          double sum = 0.0;
          std::size_t n = 0;
          for (const auto* r : rows) {
            const double v = value(*r);
            if (std::isfinite(v)) sum += v, ++n;
          }
          if (n) s.points.emplace_back(pen, sum / static_cast<double>(n));
        }
        series.push_back(std::move(s));
      }
      svg::Axes axes;
      axes.title = fmt::format("{} {} vs penetration", to_string(q), metric);
      axes.x_label = "penetration (%)";
      axes.y_label = metric;
      written.push_back(dir / fmt::format("{}_vs_penetration_{}.svg", metric == std::string_view("MAPE") ? "mape" : "rmse",
                                          to_string(q)));
      write_file(written.back(), svg::line_chart(axes, series));
    };
    chart("MAPE", [](const CellResult& r) { return r.metrics->mape_pct.value_or(std::nan("")); });
    chart("RMSE", [](const CellResult& r) { return r.metrics->rmse; });

    const auto truth = std::find_if(report.truth_test.begin(), report.truth_test.end(),
                                    [&](const auto& t) { return t.first == q; });
    if (truth != report.truth_test.end()) {
      // Lowest penetration, preferring LSTM with RTS, replicate 0.
      const CellResult* pick = nullptr;
      auto rank = [](const CellResult& r) {
        return std::tuple(r.key.predictor != PredictorKind::lstm, r.key.filter != FilterKind::rts,
                          r.key.penetration_pct, r.key.replicate);
      };
      for (const auto& r : report.rows) {
        if (r.key.quantity != q || r.predictions.size() != truth->second.size()) continue;
        if (!pick || rank(r) < rank(*pick)) pick = &r;
      }
      if (pick) {
        svg::LineSeries actual{"ground truth (100%)", {}};
        svg::LineSeries predicted{fmt::format("{}+{} at {}", to_string(pick->key.predictor),
                                              to_string(pick->key.filter), pen_label(pick->key.penetration_pct)),
                                  {}};
        for (std::size_t i = 0; i < truth->second.size(); ++i) {
          actual.points.emplace_back(static_cast<double>(i), truth->second[i]);
          predicted.points.emplace_back(static_cast<double>(i), pick->predictions[i]);
        }
        svg::Axes axes;
        axes.title = fmt::format("predicted vs actual {}", to_string(q));
        axes.x_label = "test step";
        axes.y_label = q == Quantity::speed ? "speed (m/s)" : "space headway (m)";
        axes.width = 960;
        axes.markers = false;
        written.push_back(dir / fmt::format("overlay_{}.svg", to_string(q)));
        write_file(written.back(), svg::line_chart(axes, {actual, predicted}));
      }
    }
  }

  std::vector<svg::GridCell> cells;
  for (const auto& r : report.rows) {
    svg::GridCell c;
    c.panel = fmt::format("{} (replicate {})", to_string(r.key.quantity), r.key.replicate);
    c.row = fmt::format("{}+{}", to_string(r.key.predictor), to_string(r.key.filter));
    c.column = pen_label(r.key.penetration_pct);
    c.valid = r.ttest.has_value();
    c.significant = c.valid && r.ttest->significant_at_95;
    c.attributes = {{"quantity", std::string(to_string(r.key.quantity))},
                    {"penetration", fmt::format("{:g}", r.key.penetration_pct)},
                    {"filter", std::string(to_string(r.key.filter))},
                    {"predictor", std::string(to_string(r.key.predictor))},
                    {"replicate", std::to_string(r.key.replicate)}};
    if (c.valid) c.attributes.emplace_back("p-value", num(r.ttest->p_value));
    cells.push_back(std::move(c));
  }
  written.push_back(dir / "significance_grid.svg");
  write_file(written.back(), svg::significance_grid("paired t-test vs ground truth (S = significant at 95%)", cells));
  return written;
}

void write_sweep_csv(std::ostream& out, const SweepStats& stats) {
  out << "candidate,median,q1,q3,min,max\n";
  for (const auto& c : stats.candidates) {
    out << fmt::format("{:g},{},{},{},{},{}\n", c.candidate, num(c.median), num(c.q1), num(c.q3), num(c.min),
                       num(c.max));
  }
}

std::string sweep_svg(const SweepStats& stats, std::string_view parameter) {
  std::vector<svg::Box> boxes;
  for (const auto& c : stats.candidates) {
    boxes.push_back({fmt::format("{:g}", c.candidate), c.min, c.q1, c.median, c.q3, c.max});
  }
  svg::Axes axes;
  axes.title = fmt::format("normalized RMSE by {} (selected {:g})", parameter, stats.selected().candidate);
  axes.x_label = std::string(parameter);
  axes.y_label = "RMSE (normalized)";
  return svg::box_plot(axes, boxes);
}

void write_latency_csv(std::ostream& out, const std::vector<LatencyReport>& reports) {
  out << "lag,steps,min_us,mean_us,max_us,budget_us,pass\n";
  for (const auto& r : reports) {
    out << fmt::format("{},{},{},{},{},{:g},{}\n", r.lag, r.steps, num(r.min_us), num(r.mean_us), num(r.max_us),
                       r.budget_us, r.pass ? 1 : 0);
  }
}

}  // namespace cvflow
