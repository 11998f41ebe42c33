#include <gtest/gtest.h>

#include <cmath>

#include "dla/augment.hpp"
#include "dla/errors.hpp"
#include "dla/synthdocs.hpp"

using namespace dla;

TEST(Augment, DeterministicPerSeed) {
  const auto page = synth::generate_page(synth::preset("source"), 3).image;
  const auto a = make_views(page, 42), b = make_views(page, 42), c = make_views(page, 43);
  EXPECT_EQ(a.weak, b.weak);
  EXPECT_EQ(a.strong, b.strong);
  EXPECT_FALSE(a.strong == c.strong);
}

TEST(Augment, ShapesPreservedAndValuesClipped) {
  const auto page = synth::generate_page(synth::preset("target"), 4).image;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto v = make_views(page, seed);
    for (const Image* img : {&v.weak, &v.strong}) {
      EXPECT_EQ(img->channels(), page.channels());
      EXPECT_EQ(img->height(), page.height());
      EXPECT_EQ(img->width(), page.width());
      for (double x : img->data()) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
      }
    }
  }
}

TEST(Augment, WeakViewOfBlankPageStaysWithinJitter) {
  const Image blank(3, 32, 32, 1.0);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto v = make_views(blank, seed);
    for (double x : v.weak.data()) EXPECT_GE(x, 1.0 - 0.05 - 1e-12);
  }
}

TEST(Augment, WeakViewIsUniformShift) {
  const auto page = synth::generate_page(synth::preset("target"), 5).image;
  const auto v = make_views(page, 9);
  // Every unclipped pixel moves by the same amount.
  double shift = NAN;
  for (std::size_t i = 0; i < page.data().size(); ++i) {
    const double o = page.data()[i], w = v.weak.data()[i];
    if (w <= 0.0 || w >= 1.0) continue;
    if (std::isnan(shift)) shift = w - o;
    EXPECT_NEAR(w - o, shift, 1e-12);
  }
  EXPECT_LE(std::abs(shift), 0.05);
}

TEST(Augment, RegistryIsPhotometricOnly) {
  for (const auto& t : transform_registry()) EXPECT_EQ(t.kind, TransformKind::Photometric) << t.name;
}

TEST(Augment, ConfigValidation) {
  AugmentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.noise_sigma = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.max_erased = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Augment, ZeroStrengthsLeaveImageUnchanged) {
  const auto page = synth::generate_page(synth::preset("source"), 6).image;
  AugmentConfig c{0, 0, 0, 0, 0, 0};
  const auto v = make_views(page, 1, c);
  EXPECT_EQ(v.weak, page);
  EXPECT_EQ(v.strong, page);
}
