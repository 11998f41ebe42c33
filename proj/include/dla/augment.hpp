#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dla/image.hpp"

namespace dla {

struct AugmentConfig {
  double weak_brightness = 0.05;
  double strong_brightness = 0.3;
  double strong_contrast = 0.3;
  double noise_sigma = 0.03;
  int max_erased = 3;
  double max_erase_area = 0.05;  // fraction of page area per rectangle

  void validate() const;
};

struct AugmentedViews {
  Image weak;    // teacher input
  Image strong;  // student input
};

/// Photometric-only views; geometry is untouched so boxes carry over
/// unchanged. Deterministic in (image, seed).
AugmentedViews make_views(const Image& image, std::uint64_t seed, const AugmentConfig& cfg = {});

enum class TransformKind { Photometric, Geometric };

struct TransformInfo {
  std::string name;
  TransformKind kind;
  const char* branch;  // "weak" or "strong"
};

/// Every transform make_views may apply.
const std::vector<TransformInfo>& transform_registry();

}  // namespace dla
