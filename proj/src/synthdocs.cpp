#include "dla/synthdocs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dla/errors.hpp"
#include "dla/rng.hpp"

namespace dla::synth {
namespace {

class Canvas {
 public:
  Canvas(int w, int h, double bg) : w_(w), h_(h), px_(static_cast<std::size_t>(w) * h, bg) {}

  void fill(int x0, int y0, int x1, int y1, double v) {
    x0 = std::max(x0, 0);
    y0 = std::max(y0, 0);
    x1 = std::min(x1, w_);
    y1 = std::min(y1, h_);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) px_[static_cast<std::size_t>(y) * w_ + x] = v;
  }
  void set(int x, int y, double v) { px_[static_cast<std::size_t>(y) * w_ + x] = v; }
  void add_noise(Rng& rng, double sigma) {
    for (double& v : px_) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
  }

  Image to_image() const {
    Image img(3, h_, w_);
    for (int c = 0; c < 3; ++c)
      std::copy(px_.begin(), px_.end(), img.data().begin() + static_cast<std::ptrdiff_t>(c) * px_.size());
    quantize8(img);
    return img;
  }

 private:
  int w_, h_;
  std::vector<double> px_;
};

// Word segments along one text line, ending exactly at `x_end`.
void draw_words(Canvas& cv, Rng& rng, int x0, int x_end, int y, int thickness, double ink) {
  int x = x0;
  while (x < x_end) {
    int len = static_cast<int>(rng.uniform_int(6, 28));
    if (x + len >= x_end - 4) len = x_end - x;
    cv.fill(x, y, x + len, y + thickness, ink);
    x += len + static_cast<int>(rng.uniform_int(2, 4));
  }
}

// Renders one element with its top-left at (x0, y0); returns the height
// actually drawn (text snaps to its line grid).
int render(Canvas& cv, Rng& rng, const RenderStyle& st, Texture tex, int x0, int y0, int w, int h) {
  const double ink = st.ink;
  const int x1 = x0 + w;
  switch (tex) {
    case Texture::LineBundle: {
      const int lines = std::max(1, (h - st.text_line) / st.text_pitch + 1);
      for (int i = 0; i < lines; ++i) {
        const int y = y0 + i * st.text_pitch;
        int end = x1;
        if (i == lines - 1 && lines > 1)
          end = x0 + std::max(8, static_cast<int>(std::lround(w * rng.uniform(0.3, 0.9))));
        draw_words(cv, rng, x0, end, y, st.text_line, ink);
      }
      return (lines - 1) * st.text_pitch + st.text_line;
    }
    case Texture::SolidBar:
      cv.fill(x0, y0, x1, y0 + h, ink);
      return h;
    case Texture::Hatched: {
      const int y1 = y0 + h;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x)
          if (((x - x0) + (y - y0)) % st.hatch_spacing < st.stroke) cv.set(x, y, ink);
      cv.fill(x0, y0, x1, y0 + st.stroke, ink);
      cv.fill(x0, y1 - st.stroke, x1, y1, ink);
      cv.fill(x0, y0, x0 + st.stroke, y1, ink);
      cv.fill(x1 - st.stroke, y0, x1, y1, ink);
      return h;
    }
    case Texture::Tabular: {
      // Top, header and bottom rules, column rules, one short entry per cell.
      const int y1 = y0 + h;
      const int row = static_cast<int>(rng.uniform_int(9, 14));
      const int cols = static_cast<int>(rng.uniform_int(2, 5));
      cv.fill(x0, y0, x1, y0 + st.stroke, ink);
      cv.fill(x0, y1 - st.stroke, x1, y1, ink);
      if (2 * row <= h) cv.fill(x0, y0 + row, x1, y0 + row + st.stroke, ink);
      for (int c = 1; c < cols; ++c) {
        const int cx = x0 + c * w / cols;
        cv.fill(cx, y0, cx + st.stroke, y1, ink);
      }
      for (int r = 0; (r + 1) * row <= h; ++r) {
        const int ty = y0 + r * row + (row - st.text_line + 1) / 2;
        for (int c = 0; c < cols; ++c) {
          const int cx0 = x0 + c * w / cols, cx1 = x0 + (c + 1) * w / cols;
          const int start = c == 0 ? cx0 : cx0 + 3;
          const int len = std::max(3, static_cast<int>((cx1 - start) * rng.uniform(0.3, 0.7)));
          cv.fill(start, ty, std::min(start + len, x1), ty + st.text_line, ink);
        }
      }
      return h;
    }
  }
  return h;
}

int sample_category(Rng& rng, const std::array<double, kNumCategories>& weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (int c = 0; c < kNumCategories; ++c) {
    if (u < weights[c]) return c;
    u -= weights[c];
  }
  for (int c = kNumCategories - 1; c >= 0; --c)
    if (weights[c] > 0) return c;
  return 0;
}

}  // namespace

void DomainSpec::validate() const {
  if (page_width < 128 || page_height < 128) throw ConfigError("page size must be >= 128");
  if (columns != 1 && columns != 2) throw ConfigError("column count must be 1 or 2");
  bool any = false;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ConfigError("category weights must be >= 0");
    any = any || w > 0.0;
  }
  if (!any) throw ConfigError("at least one category weight must be positive");
  if (element_count.lo < 0 || element_count.hi < element_count.lo)
    throw ConfigError("invalid element count range");
  for (int c = 0; c < kNumCategories; ++c) {
    if (heights[c].lo < 1 || heights[c].hi < heights[c].lo) throw ConfigError("invalid height range");
    if (!(min_width_frac[c] > 0.0 && min_width_frac[c] <= max_width_frac[c] && max_width_frac[c] <= 1.0))
      throw ConfigError("invalid width fractions");
  }
  if (style.stroke < 1 || style.text_line < 1 || style.text_pitch <= style.text_line ||
      style.hatch_spacing <= style.stroke || !(style.noise >= 0.0 && style.noise <= 0.5))
    throw ConfigError("invalid render style");
  const int usable = page_width - 2 * margin - (columns - 1) * column_gap;
  if (usable / columns < 16) throw ConfigError("columns too narrow for page size");
}

RenderedPage generate_page(const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  const int W = spec.page_width;
  const int H = spec.page_height;
  Canvas cv(W, H, spec.style.background);
  RenderedPage page;

  const int usable_w = W - 2 * spec.margin;
  const int col_w = (usable_w - (spec.columns - 1) * spec.column_gap) / spec.columns;
  std::vector<int> cursor(spec.columns, spec.margin);
  const int bottom = H - spec.margin;

  const auto n = rng.uniform_int(spec.element_count.lo, spec.element_count.hi);
  for (std::int64_t k = 0; k < n; ++k) {
    const int cat = sample_category(rng, spec.weights);
    int h = static_cast<int>(rng.uniform_int(spec.heights[cat].lo, spec.heights[cat].hi));
    const bool spanning = spec.columns > 1 && (cat == kFigure || cat == kTable) &&
                          rng.bernoulli(spec.span_probability);
    int y, x_base, avail_w;
    if (spanning) {
      y = *std::max_element(cursor.begin(), cursor.end());
      x_base = spec.margin;
      avail_w = usable_w;
    } else {
      const int col = static_cast<int>(std::min_element(cursor.begin(), cursor.end()) - cursor.begin());
      y = cursor[col];
      x_base = spec.margin + col * (col_w + spec.column_gap);
      avail_w = col_w;
    }
    if (y + h > bottom) {
      // Shrink into the remaining space when possible, otherwise stop.
      if (bottom - y >= spec.heights[cat].lo)
        h = bottom - y;
      else
        break;
    }
    const double frac = rng.uniform(spec.min_width_frac[cat], spec.max_width_frac[cat]);
    const int w = std::clamp(static_cast<int>(std::lround(avail_w * frac)), 8, avail_w);
    int x0 = x_base;
    if (cat == kFigure || cat == kTable) x0 += (avail_w - w) / 2;

    const int drawn_h = render(cv, rng, spec.style, spec.style.textures[cat], x0, y, w, h);
    page.annotations.push_back(
        {Box{double(x0), double(y), double(x0 + w), double(y + drawn_h)}, cat});

    const int next = y + drawn_h +
                     static_cast<int>(rng.uniform_int(spec.element_gap.lo, spec.element_gap.hi));
    if (spanning) {
      std::fill(cursor.begin(), cursor.end(), next);
    } else {
      const int col = (x_base - spec.margin) / (col_w + spec.column_gap);
      cursor[col] = next;
    }
  }
  if (spec.style.noise > 0.0) cv.add_noise(rng, spec.style.noise);
  page.image = cv.to_image();
  return page;
}

std::vector<RenderedPage> generate_pages(const DomainSpec& spec, int n_pages, std::uint64_t seed) {
  std::vector<RenderedPage> pages;
  pages.reserve(static_cast<std::size_t>(std::max(n_pages, 0)));
  for (int i = 0; i < n_pages; ++i) pages.push_back(generate_page(spec, seed + static_cast<std::uint64_t>(i)));
  return pages;
}

Dataset generate_dataset(const DomainSpec& spec, int n_pages, std::uint64_t seed,
                         const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  if (n_pages < 1) throw ConfigError("n_pages must be >= 1");
  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  Dataset ds;
  ds.root = out_dir;
  ds.taxonomy = common4_taxonomy();
  ds.taxonomy.name = spec.name;
  for (int i = 0; i < n_pages; ++i) {
    const RenderedPage page = generate_page(spec, seed + static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "images/%05d.png", i);
    write_png(page.image, out_dir / name);
    ds.images.push_back({i, name, page.image.width(), page.image.height()});
    for (const auto& a : page.annotations) ds.annotations.push_back({i, a.box, a.category});
  }
  save_coco(ds, out_dir / "annotations.json");
  return ds;
}

std::pair<DomainSpec, DomainSpec> domain_presets() {
  DomainSpec src;
  src.name = "source";
  src.columns = 2;
  src.element_count = {6, 12};
  src.weights = {0.12, 0.10, 0.55, 0.23};
  src.heights = {IntRange{50, 110}, IntRange{40, 100}, IntRange{20, 80}, IntRange{12, 16}};
  src.min_width_frac = {0.7, 0.8, 1.0, 0.3};
  src.max_width_frac = {1.0, 1.0, 1.0, 0.8};
  src.span_probability = 0.3;
  src.style.stroke = 1;
  src.style.text_line = 2;
  src.style.text_pitch = 5;
  src.style.hatch_spacing = 8;
  src.style.background = 1.0;
  src.style.ink = 0.05;

  DomainSpec tgt;
  tgt.name = "target";
  tgt.columns = 1;
  tgt.element_count = {3, 7};
  tgt.weights = {0.28, 0.30, 0.30, 0.12};
  tgt.heights = {IntRange{50, 110}, IntRange{40, 100}, IntRange{20, 70}, IntRange{16, 24}};
  tgt.min_width_frac = {0.5, 0.5, 0.45, 0.2};
  tgt.max_width_frac = {0.8, 1.0, 0.6, 0.5};
  tgt.style.stroke = 2;
  tgt.style.text_line = 3;
  tgt.style.text_pitch = 7;
  tgt.style.hatch_spacing = 10;
  tgt.style.background = 0.86;
  tgt.style.ink = 0.2;
  return {src, tgt};
}

DomainSpec preset(const std::string& name) {
  auto [src, tgt] = domain_presets();
  if (name == "source") return src;
  if (name == "target") return tgt;
  throw ConfigError("unknown preset '" + name + "'; valid options: source, target");
}

}  // namespace dla::synth
