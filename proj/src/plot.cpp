#include "dla/plot.hpp"

#include <algorithm>
#include <cmath>

namespace dla {

std::array<double, 3> series_color(std::size_t i) {
  static const std::array<std::array<double, 3>, 8> palette{{{0.12, 0.47, 0.71},
                                                             {1.00, 0.50, 0.05},
                                                             {0.17, 0.63, 0.17},
                                                             {0.84, 0.15, 0.16},
                                                             {0.58, 0.40, 0.74},
                                                             {0.55, 0.34, 0.29},
                                                             {0.89, 0.47, 0.76},
                                                             {0.50, 0.50, 0.50}}};
  return palette[i % palette.size()];
}

namespace {

void put(Image& img, int x, int y, const std::array<double, 3>& c) {
  if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
  for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = c[ch];
}

void line(Image& img, int x0, int y0, int x1, int y1, const std::array<double, 3>& c, int thickness) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    for (int ox = 0; ox < thickness; ++ox)
      for (int oy = 0; oy < thickness; ++oy) put(img, x0 + ox - thickness / 2, y0 + oy - thickness / 2, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

Image line_plot(const std::vector<Series>& series, int width, int height) {
  Image img(3, height, width, 1.0);
  const int left = 40, right = width - 20, top = 20, bottom = height - 30;
  double x_lo = INFINITY, x_hi = -INFINITY, y_lo = INFINITY, y_hi = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_lo = std::min(y_lo, s.y[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  const std::array<double, 3> axis{0.2, 0.2, 0.2}, grid{0.88, 0.88, 0.88};
  for (int q = 1; q <= 4; ++q) {
    const int y = bottom - (bottom - top) * q / 4;
    line(img, left, y, right, y, grid, 1);
  }
  line(img, left, bottom, right, bottom, axis, 1);
  line(img, left, bottom, left, top, axis, 1);
  if (!std::isfinite(x_lo)) return img;
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + 1.0;
  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - x_lo) / (x_hi - x_lo) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - y_lo) / (y_hi - y_lo) * (bottom - top))); };
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const auto c = series_color(k);
    bool have_prev = false;
    int prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = px(s.x[i]), y = py(s.y[i]);
      if (have_prev) line(img, prev_x, prev_y, x, y, c, 2);
      for (int ox = -2; ox <= 2; ++ox)
        for (int oy = -2; oy <= 2; ++oy) put(img, x + ox, y + oy, c);
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
  }
  return img;
}

}  // namespace dla
