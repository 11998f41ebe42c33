#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dla/geometry.hpp"
#include "dla/image.hpp"
#include "dla/labelspace.hpp"

namespace dla::synth {

/// Category ids follow common4_taxonomy(): figure, table, text, title.
enum Category : int { kFigure = 0, kTable = 1, kText = 2, kTitle = 3 };
inline constexpr int kNumCategories = 4;

enum class Texture { LineBundle, SolidBar, Hatched, Tabular };

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct RenderStyle {
  int stroke = 1;          // frame / grid / hatch line thickness
  int text_line = 2;       // text line thickness
  int text_pitch = 5;      // distance between text line tops
  int hatch_spacing = 8;
  double background = 1.0;
  double ink = 0.0;
  double noise = 0.0;      // per-pixel Gaussian grain, shared by all channels
  std::array<Texture, kNumCategories> textures{Texture::Hatched, Texture::Tabular,
                                               Texture::LineBundle, Texture::SolidBar};
};

struct DomainSpec {
  std::string name;
  int page_width = 320;
  int page_height = 320;
  int columns = 2;
  int margin = 16;
  int column_gap = 12;
  IntRange element_gap{6, 12};
  IntRange element_count{5, 10};
  std::array<double, kNumCategories> weights{0.25, 0.25, 0.25, 0.25};
  std::array<IntRange, kNumCategories> heights{IntRange{50, 100}, IntRange{40, 90},
                                               IntRange{20, 70}, IntRange{12, 16}};
  // Width as a fraction of the usable width it is placed in.
  std::array<double, kNumCategories> min_width_frac{1.0, 1.0, 1.0, 0.3};
  std::array<double, kNumCategories> max_width_frac{1.0, 1.0, 1.0, 0.8};
  // Probability that a figure/table spans all columns.
  double span_probability = 0.0;
  RenderStyle style;

  /// Throws ConfigError when an invariant is broken.
  void validate() const;
};

struct PageAnnotation {
  Box box;
  int category = 0;

  friend bool operator==(const PageAnnotation&, const PageAnnotation&) = default;
};

struct RenderedPage {
  Image image;  // 3 identical channels
  std::vector<PageAnnotation> annotations;
};

/// Deterministic in (spec, seed).
RenderedPage generate_page(const DomainSpec& spec, std::uint64_t seed);

/// Writes `<out_dir>/images/NNNNN.png` and `<out_dir>/annotations.json`.
/// Page i uses seed + i.
Dataset generate_dataset(const DomainSpec& spec, int n_pages, std::uint64_t seed,
                         const std::filesystem::path& out_dir);

/// In-memory variant used by tests and the acceptance suite.
std::vector<RenderedPage> generate_pages(const DomainSpec& spec, int n_pages, std::uint64_t seed);

/// (source, target): two-column text-heavy white pages versus one-column
/// table/figure-heavy pages with thicker strokes on a gray background.
std::pair<DomainSpec, DomainSpec> domain_presets();
DomainSpec preset(const std::string& name);

}  // namespace dla::synth
