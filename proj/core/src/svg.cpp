#include "cvflow/svg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

namespace cvflow::svg {

std::string escape(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

Document::Document(double width, double height) : width_(width), height_(height) {}

void Document::rect(double x, double y, double w, double h, std::string_view fill, std::string_view extra) {
  body_ += fmt::format(R"(<rect x="{:.2f}" y="{:.2f}" width="{:.2f}" height="{:.2f}" fill="{}"{}{}/>)", x, y, w, h,
                       fill, extra.empty() ? "" : " ", extra);
  body_ += '\n';
}

void Document::line(double x1, double y1, double x2, double y2, std::string_view stroke, double width) {
  body_ += fmt::format(R"(<line x1="{:.2f}" y1="{:.2f}" x2="{:.2f}" y2="{:.2f}" stroke="{}" stroke-width="{}"/>)",
                       x1, y1, x2, y2, stroke, width);
  body_ += '\n';
}

void Document::polyline(const std::vector<std::pair<double, double>>& points, std::string_view stroke, double width) {
  std::string pts;
  for (const auto& [x, y] : points) pts += fmt::format("{:.2f},{:.2f} ", x, y);
  if (!pts.empty()) pts.pop_back();
  body_ += fmt::format(R"(<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>)", pts, stroke, width);
  body_ += '\n';
}

void Document::circle(double cx, double cy, double r, std::string_view fill) {
  body_ += fmt::format(R"(<circle cx="{:.2f}" cy="{:.2f}" r="{}" fill="{}"/>)", cx, cy, r, fill);
  body_ += '\n';
}

void Document::text(double x, double y, std::string_view content, double size, std::string_view anchor,
                     std::string_view extra) {
  body_ += fmt::format(R"(<text x="{:.2f}" y="{:.2f}" font-size="{}" text-anchor="{}"{}{}>{}</text>)", x, y, size,
                       anchor, extra.empty() ? "" : " ", extra, escape(content));
  body_ += '\n';
}

void Document::raw(std::string_view fragment) {
  body_ += fragment;
  body_ += '\n';
}

std::string Document::str() const {
  return fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\" "
      "font-family=\"sans-serif\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{2}</svg>\n",
      width_, height_, body_);
}

std::string_view palette(std::size_t i) {
  static constexpr std::string_view colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % std::size(colors)];
}

namespace {

struct Frame {
  double left = 70, right = 170, top = 40, bottom = 55;
  double x0, x1, y0, y1;
  double width, height;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * (width - left - right); }
  double py(double y) const { return height - bottom - (y - y0) / (y1 - y0) * (height - top - bottom); }
};

double nice_step(double span, int target) {
  const double raw = span / target;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

void pad_range(double& lo, double& hi) {
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
    return;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;
}

void draw_axes(Document& doc, const Frame& f, const Axes& axes, bool numeric_x) {
  doc.text(f.width / 2, 22, axes.title, 15, "middle", R"(font-weight="bold")");
  doc.line(f.left, f.height - f.bottom, f.width - f.right, f.height - f.bottom, "black");
  doc.line(f.left, f.top, f.left, f.height - f.bottom, "black");
  const double ys = nice_step(f.y1 - f.y0, 6);
  for (double y = std::ceil(f.y0 / ys) * ys; y <= f.y1 + 1e-12; y += ys) {
    doc.line(f.left - 4, f.py(y), f.left, f.py(y), "black");
    doc.line(f.left, f.py(y), f.width - f.right, f.py(y), "#e0e0e0", 0.5);
    doc.text(f.left - 7, f.py(y) + 4, fmt::format("{:.4g}", y), 10, "end");
  }
  if (numeric_x) {
    const double xs = nice_step(f.x1 - f.x0, 8);
    for (double x = std::ceil(f.x0 / xs) * xs; x <= f.x1 + 1e-12; x += xs) {
      doc.line(f.px(x), f.height - f.bottom, f.px(x), f.height - f.bottom + 4, "black");
      doc.text(f.px(x), f.height - f.bottom + 16, fmt::format("{:.4g}", x), 10, "middle");
    }
  }
  doc.text((f.left + f.width - f.right) / 2, f.height - 12, axes.x_label, 12, "middle");
  doc.text(16, (f.top + f.height - f.bottom) / 2, axes.y_label, 12, "middle",
           fmt::format(R"x(transform="rotate(-90 16 {:.2f})")x", (f.top + f.height - f.bottom) / 2));
}

}  // namespace

std::string line_chart(const Axes& axes, const std::vector<LineSeries>& series) {
  Frame f;
  f.width = axes.width;
  f.height = axes.height;
  f.x0 = f.y0 = std::numeric_limits<double>::infinity();
  f.x1 = f.y1 = -std::numeric_limits<double>::infinity();
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      f.x0 = std::min(f.x0, x);
      f.x1 = std::max(f.x1, x);
      f.y0 = std::min(f.y0, y);
      f.y1 = std::max(f.y1, y);
    }
  }
  if (!std::isfinite(f.x0)) f.x0 = 0, f.x1 = 1, f.y0 = 0, f.y1 = 1;
  if (!(f.x1 > f.x0)) f.x0 -= 0.5, f.x1 += 0.5;
  pad_range(f.y0, f.y1);

  Document doc(f.width, f.height);
  draw_axes(doc, f, axes, true);
  for (std::size_t i = 0; i < series.size(); ++i) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : series[i].points) {
      if (std::isfinite(x) && std::isfinite(y)) pts.emplace_back(f.px(x), f.py(y));
    }
    doc.polyline(pts, palette(i), axes.markers ? 1.5 : 1.0);
    if (axes.markers) {
      for (const auto& [x, y] : pts) doc.circle(x, y, 2.5, palette(i));
    }
    const double ly = f.top + 10 + 18.0 * static_cast<double>(i);
    doc.line(f.width - f.right + 12, ly, f.width - f.right + 32, ly, palette(i), 2.5);
    doc.text(f.width - f.right + 36, ly + 4, series[i].label, 11);
  }
  return doc.str();
}

std::string box_plot(const Axes& axes, const std::vector<Box>& boxes) {
  Frame f;
  f.width = axes.width;
  f.height = axes.height;
  f.right = 30;
  f.x0 = 0;
  f.x1 = static_cast<double>(std::max<std::size_t>(boxes.size(), 1));
  f.y0 = std::numeric_limits<double>::infinity();
  f.y1 = -std::numeric_limits<double>::infinity();
  for (const auto& b : boxes) {
    f.y0 = std::min(f.y0, b.min);
    f.y1 = std::max(f.y1, b.max);
  }
  if (!std::isfinite(f.y0)) f.y0 = 0, f.y1 = 1;
  pad_range(f.y0, f.y1);

  Document doc(f.width, f.height);
  draw_axes(doc, f, axes, false);
  const double slot = (f.width - f.left - f.right) / f.x1;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto& b = boxes[i];
    const double cx = f.px(static_cast<double>(i) + 0.5);
    const double half = 0.25 * slot;
    doc.line(cx, f.py(b.min), cx, f.py(b.q1), "black");
    doc.line(cx, f.py(b.q3), cx, f.py(b.max), "black");
    doc.line(cx - half / 2, f.py(b.min), cx + half / 2, f.py(b.min), "black");
    doc.line(cx - half / 2, f.py(b.max), cx + half / 2, f.py(b.max), "black");
    doc.rect(cx - half, f.py(b.q3), 2 * half, std::max(0.5, f.py(b.q1) - f.py(b.q3)), "#cfe2f3",
             R"(stroke="black")");
    doc.line(cx - half, f.py(b.median), cx + half, f.py(b.median), "#2ca02c", 2.5);
    doc.text(cx, f.height - f.bottom + 16, b.label, 10, "middle");
  }
  return doc.str();
}

std::string significance_grid(std::string_view title, const std::vector<GridCell>& cells) {
  auto index_of = [](std::vector<std::string>& v, const std::string& s) {
    const auto it = std::find(v.begin(), v.end(), s);
    if (it != v.end()) return static_cast<std::size_t>(it - v.begin());
    v.push_back(s);
    return v.size() - 1;
  };
  std::vector<std::string> panels, columns;
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : cells) {
    const auto p = index_of(panels, c.panel);
    if (rows.size() <= p) rows.resize(p + 1);
    index_of(rows[p], c.row);
    index_of(columns, c.column);
  }

  const double cell_w = 56, cell_h = 22, label_w = 200, top = 50, panel_gap = 40;
  std::vector<double> panel_top(panels.size());
  double y = top;
  for (std::size_t p = 0; p < panels.size(); ++p) {
    panel_top[p] = y;
    y += 20 + cell_h * static_cast<double>(rows[p].size()) + panel_gap;
  }
  const double width = label_w + cell_w * static_cast<double>(columns.size()) + 40;
  const double height = y + 20;

  Document doc(width, height);
  doc.text(width / 2, 24, title, 15, "middle", R"(font-weight="bold")");
  for (std::size_t p = 0; p < panels.size(); ++p) {
    doc.text(10, panel_top[p] + 12, panels[p], 12, "start", R"(font-weight="bold")");
    for (std::size_t j = 0; j < columns.size(); ++j) {
      doc.text(label_w + cell_w * (static_cast<double>(j) + 0.5), panel_top[p] + 14, columns[j], 10, "middle");
    }
    for (std::size_t r = 0; r < rows[p].size(); ++r) {
      doc.text(label_w - 8, panel_top[p] + 20 + cell_h * (static_cast<double>(r) + 0.7), rows[p][r], 10, "end");
    }
  }
  for (const auto& c : cells) {
    const auto p = static_cast<std::size_t>(std::find(panels.begin(), panels.end(), c.panel) - panels.begin());
    const auto r = static_cast<std::size_t>(std::find(rows[p].begin(), rows[p].end(), c.row) - rows[p].begin());
    const auto j = static_cast<std::size_t>(std::find(columns.begin(), columns.end(), c.column) - columns.begin());
    std::string attrs = R"(stroke="white" class="cell")";
    attrs += fmt::format(R"( data-significant="{}")", c.valid ? (c.significant ? "1" : "0") : "error");
    for (const auto& [k, v] : c.attributes) attrs += fmt::format(R"( data-{}="{}")", k, escape(v));
    const char* fill = !c.valid ? "#bdbdbd" : (c.significant ? "#e6550d" : "#74c476");
    const double x = label_w + cell_w * static_cast<double>(j);
    const double yy = panel_top[p] + 20 + cell_h * static_cast<double>(r);
    doc.rect(x, yy, cell_w, cell_h, fill, attrs);
    doc.text(x + cell_w / 2, yy + cell_h * 0.7, !c.valid ? "err" : (c.significant ? "S" : "NS"), 10, "middle");
  }
  return doc.str();
}

}  // namespace cvflow::svg
