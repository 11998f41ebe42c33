#include "dla/augment.hpp"

#include <algorithm>
#include <cmath>

#include "dla/errors.hpp"
#include "dla/rng.hpp"

namespace dla {

void AugmentConfig::validate() const {
  auto check = [](double v, double hi, const char* name) {
    if (!(v >= 0.0 && v <= hi)) throw ConfigError(std::string("augment.") + name + " out of range");
  };
  check(weak_brightness, 1.0, "weak_brightness");
  check(strong_brightness, 1.0, "strong_brightness");
  check(strong_contrast, 1.0, "strong_contrast");
  check(noise_sigma, 1.0, "noise_sigma");
  check(max_erase_area, 1.0, "max_erase_area");
  if (max_erased < 0) throw ConfigError("augment.max_erased must be >= 0");
}

const std::vector<TransformInfo>& transform_registry() {
  static const std::vector<TransformInfo> registry{
      {"brightness", TransformKind::Photometric, "weak"},
      {"brightness", TransformKind::Photometric, "strong"},
      {"contrast", TransformKind::Photometric, "strong"},
      {"gaussian_noise", TransformKind::Photometric, "strong"},
      {"random_erase", TransformKind::Photometric, "strong"},
  };
  return registry;
}

AugmentedViews make_views(const Image& image, std::uint64_t seed, const AugmentConfig& cfg) {
  Rng rng(seed);
  const int C = image.channels(), H = image.height(), W = image.width();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  AugmentedViews v{image, image};

  const double weak_shift = rng.uniform(-cfg.weak_brightness, cfg.weak_brightness);
  for (double& x : v.weak.data()) x = std::clamp(x + weak_shift, 0.0, 1.0);

  const double shift = rng.uniform(-cfg.strong_brightness, cfg.strong_brightness);
  const double gain = 1.0 + rng.uniform(-cfg.strong_contrast, cfg.strong_contrast);
  // One noise field shared by all channels keeps gray pages gray.
  std::vector<double> noise(plane);
  for (double& n : noise) n = cfg.noise_sigma * rng.normal();
  auto& s = v.strong.data();
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      double& x = s[c * plane + i];
      x = std::clamp(x + (gain - 1.0) * (x - 0.5) + shift + noise[i], 0.0, 1.0);
    }

  const auto n_erase = cfg.max_erased > 0 ? rng.uniform_int(0, cfg.max_erased) : 0;
  const double page_area = static_cast<double>(plane);
  for (std::int64_t e = 0; e < n_erase; ++e) {
    const double area = rng.uniform(0.2, 1.0) * cfg.max_erase_area * page_area;
    const double aspect = std::exp(rng.uniform(std::log(0.3), std::log(3.3)));
    const int ew = std::clamp(static_cast<int>(std::sqrt(area * aspect)), 1, W);
    const int eh = std::clamp(static_cast<int>(area / std::max(ew, 1)), 1, H);
    const int x0 = static_cast<int>(rng.uniform_int(0, W - ew));
    const int y0 = static_cast<int>(rng.uniform_int(0, H - eh));
    const double fill = rng.uniform();
    for (int c = 0; c < C; ++c)
      for (int y = y0; y < y0 + eh; ++y)
        for (int x = x0; x < x0 + ew; ++x) s[c * plane + static_cast<std::size_t>(y) * W + x] = fill;
  }
  return v;
}

}  // namespace dla
