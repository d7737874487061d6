#pragma once

#include <string>
#include <vector>

namespace stospec::svg {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  bool scatter = false;  // markers instead of a polyline
  bool bars = false;     // vertical bars from 0 (histograms)
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  bool log_y = false;  // non-positive values are dropped
};

/// Self-contained SVG rendering of a few series on shared axes. Non-finite
/// points are skipped.
std::string plot(const std::vector<Series>& series, const Axes& axes);

}  // namespace stospec::svg
