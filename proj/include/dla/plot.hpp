#pragma once

#include <array>
#include <string>
#include <vector>

#include "dla/image.hpp"

namespace dla {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// RGB color assigned to the i-th series of a plot.
std::array<double, 3> series_color(std::size_t i);

/// Line chart on a white canvas with axes and light horizontal gridlines
/// at the y-range quartiles. Axis ranges cover all finite points.
Image line_plot(const std::vector<Series>& series, int width = 640, int height = 400);

}  // namespace dla
