#pragma once

#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace cvflow::svg {

/// Escapes the five XML special characters.
std::string escape(std::string_view text);

/// Minimal standalone SVG writer.
class Document {
 public:
  Document(double width, double height);

  void rect(double x, double y, double w, double h, std::string_view fill, std::string_view extra = {});
  void line(double x1, double y1, double x2, double y2, std::string_view stroke, double width = 1.0);
  void polyline(const std::vector<std::pair<double, double>>& points, std::string_view stroke, double width = 1.5);
  void circle(double cx, double cy, double r, std::string_view fill);
  void text(double x, double y, std::string_view content, double size = 12.0, std::string_view anchor = "start",
            std::string_view extra = {});
  void raw(std::string_view fragment);

  std::string str() const;

 private:
  double width_;
  double height_;
  std::string body_;
};

/// Color for series i from a fixed qualitative palette.
std::string_view palette(std::size_t i);

struct LineSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double width = 720.0;
  double height = 420.0;
  bool markers = true;
};

std::string line_chart(const Axes& axes, const std::vector<LineSeries>& series);

struct Box {
  std::string label;
  double min, q1, median, q3, max;
};

std::string box_plot(const Axes& axes, const std::vector<Box>& boxes);

/// One rectangle of a significance grid; `attributes` become data-* attributes.
struct GridCell {
  std::string panel;
  std::string row;
  std::string column;
  bool significant = false;
  bool valid = true;
  std::vector<std::pair<std::string, std::string>> attributes;
};

/// Panels stacked vertically; rows and columns appear in first-seen order.
std::string significance_grid(std::string_view title, const std::vector<GridCell>& cells);

}  // namespace cvflow::svg
