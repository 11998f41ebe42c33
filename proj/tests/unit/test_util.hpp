#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dla/geometry.hpp"
#include "dla/rng.hpp"

namespace dla::testing {

inline Box random_box(Rng& rng, double extent = 20.0, bool integer = false) {
  double x0 = rng.uniform(0, extent - 1), y0 = rng.uniform(0, extent - 1);
  double x1 = rng.uniform(x0 + 0.5, extent), y1 = rng.uniform(y0 + 0.5, extent);
  if (integer) {
    x0 = std::floor(x0);
    y0 = std::floor(y0);
    x1 = std::max(x0 + 1, std::floor(x1));
    y1 = std::max(y0 + 1, std::floor(y1));
  }
  return {x0, y0, x1, y1};
}

/// Box whose IoU with `b` tends to be high.
inline Box jitter(Rng& rng, const Box& b, double amount) {
  const double w = b.width(), h = b.height();
  Box out{b.x_min + rng.uniform(-amount, amount) * w, b.y_min + rng.uniform(-amount, amount) * h,
          b.x_max + rng.uniform(-amount, amount) * w, b.y_max + rng.uniform(-amount, amount) * h};
  if (out.x_max <= out.x_min) out.x_max = out.x_min + 0.5;
  if (out.y_max <= out.y_min) out.y_max = out.y_min + 0.5;
  return out;
}

inline std::vector<double> random_distribution(Rng& rng, std::size_t k, int argmax = -1) {
  std::vector<double> p(k);
  double s = 0.0;
  for (auto& v : p) s += (v = rng.uniform(0.05, 1.0));
  for (auto& v : p) v /= s;
  if (argmax >= 0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < k; ++i)
      if (p[i] > p[best]) best = i;
    std::swap(p[best], p[static_cast<std::size_t>(argmax)]);
  }
  return p;
}

inline Detection random_detection(Rng& rng, std::size_t k, double extent = 20.0) {
  Detection d;
  d.box = random_box(rng, extent);
  d.category = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
  d.score = rng.uniform(0.0, 1.0);
  d.soft_label = random_distribution(rng, k, d.category);
  return d;
}

/// Several clusters of overlapping detections so NMS and matching have work.
inline DetectionSet random_clustered_set(Rng& rng, std::size_t n, std::size_t k, double extent = 20.0) {
  DetectionSet set;
  set.image_id = "img";
  std::vector<Box> centers;
  for (int c = 0; c < 3; ++c) centers.push_back(random_box(rng, extent));
  for (std::size_t i = 0; i < n; ++i) {
    Detection d = random_detection(rng, k, extent);
    if (rng.bernoulli(0.7)) d.box = jitter(rng, centers[rng.uniform_int(0, 2)], 0.15);
    set.detections.push_back(d);
  }
  return set;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace dla::testing
