#include <gtest/gtest.h>

#include "dla/consensus.hpp"
#include "dla/errors.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dla;
using dla::testing::jitter;
using dla::testing::random_clustered_set;

namespace {

DetectionSet one(const Box& b, int cat, double score, std::vector<double> soft) {
  DetectionSet s;
  s.image_id = "p";
  s.detections.push_back({b, cat, score, std::move(soft)});
  return s;
}

// Static and dynamic sets built from shared objects so that many pairs match.
std::pair<DetectionSet, DetectionSet> correlated_sets(Rng& rng, std::size_t n) {
  auto st = random_clustered_set(rng, n, 3);
  DetectionSet dy;
  dy.image_id = st.image_id;
  for (const auto& d : st.detections) {
    if (rng.bernoulli(0.3)) continue;
    Detection e = dla::testing::random_detection(rng, 3);
    e.box = jitter(rng, d.box, 0.1);
    e.category = rng.bernoulli(0.85) ? d.category : e.category;
    e.soft_label = dla::testing::random_distribution(rng, 3, e.category);
    dy.detections.push_back(e);
  }
  while (dy.size() < n && rng.bernoulli(0.5)) dy.detections.push_back(dla::testing::random_detection(rng, 3));
  for (auto& d : st.detections) d.score = rng.uniform(0.3, 1.0);
  for (auto& d : dy.detections) d.score = rng.uniform(0.3, 1.0);
  return {st, dy};
}

void expect_same(const PseudoLabelSet& a, const PseudoLabelSet& b) {
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.provenance, b.provenance);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto &x = a.detections.detections[i], &y = b.detections.detections[i];
    EXPECT_EQ(x.category, y.category);
    EXPECT_NEAR(x.score, y.score, 1e-12);
    EXPECT_NEAR(x.box.x_min, y.box.x_min, 1e-9);
    EXPECT_NEAR(x.box.y_min, y.box.y_min, 1e-9);
    EXPECT_NEAR(x.box.x_max, y.box.x_max, 1e-9);
    EXPECT_NEAR(x.box.y_max, y.box.y_max, 1e-9);
    for (std::size_t k = 0; k < x.soft_label.size(); ++k) EXPECT_NEAR(x.soft_label[k], y.soft_label[k], 1e-12);
  }
}

}  // namespace

TEST(Fuse, IdenticalDetectionBecomesBoostedConsensus) {
  const auto s = one({10, 10, 50, 40}, 1, 0.8, {0.1, 0.8, 0.1});
  const auto out = fuse(s, s, {});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.provenance[0], Provenance::Consensus);
  EXPECT_NEAR(out.detections.detections[0].score, 0.88, 1e-12);
  EXPECT_EQ(out.detections.detections[0].box, (Box{10, 10, 50, 40}));
}

TEST(Fuse, SingleTeacherDetectionBelowThresholdAfterPenaltyIsDropped) {
  const auto d = one({10, 10, 50, 40}, 0, 0.9, {0.9, 0.1});
  EXPECT_TRUE(fuse({}, d, {}).empty());
}

TEST(Fuse, ConfidentSingleTeacherDetectionSurvivesSoftPenalty) {
  ConsensusConfig cfg;
  cfg.penalty = 0.8;
  const auto d = one({10, 10, 50, 40}, 0, 0.9, {0.9, 0.1});
  const auto out = fuse(d, {}, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.provenance[0], Provenance::StaticOnly);
  EXPECT_NEAR(out.detections.detections[0].score, 0.72, 1e-12);
}

TEST(Fuse, DifferentCategoriesDoNotMatch) {
  const auto a = one({10, 10, 50, 40}, 0, 0.9, {0.9, 0.1});
  const auto b = one({10, 10, 50, 40}, 1, 0.9, {0.1, 0.9});
  EXPECT_TRUE(fuse(a, b, {}).empty());
}

TEST(Fuse, ScoreWeightedBoxAndAveragedSoftLabel) {
  const auto a = one({0, 0, 10, 10}, 0, 0.6, {0.6, 0.4});
  const auto b = one({1, 0, 11, 10}, 0, 0.9, {0.8, 0.2});
  const auto out = fuse(a, b, {});
  ASSERT_EQ(out.size(), 1u);
  const auto& d = out.detections.detections[0];
  EXPECT_NEAR(d.box.x_min, 0.6, 1e-12);
  EXPECT_NEAR(d.box.x_max, 10.6, 1e-12);
  EXPECT_NEAR(d.score, 0.99, 1e-12);
  EXPECT_NEAR(d.soft_label[0], 0.7, 1e-12);
}

TEST(Fuse, SharedEdgeSurvivesRounding) {
  Rng rng(21);
  for (int i = 0; i < 500; ++i) {
    const double sa = rng.uniform(0.3, 1.0), sb = rng.uniform(0.3, 1.0);
    const auto a = one({rng.uniform(0, 100), 7.3, 320, 319.9}, 0, sa, {1, 0});
    const auto b = one({rng.uniform(0, 100), 7.3, 320, 319.9}, 0, sb, {1, 0});
    const auto out = fuse(a, b, {0.1, 1.1, 0.5, 0.05, 0.5});
    ASSERT_EQ(out.size(), 1u);
    const auto& box = out.detections.detections[0].box;
    EXPECT_EQ(box.x_max, 320.0);
    EXPECT_EQ(box.y_min, 7.3);
    EXPECT_EQ(box.y_max, 319.9);
  }
}

TEST(Fuse, ScoreCappedAtOne) {
  const auto a = one({0, 0, 10, 10}, 0, 0.95, {1, 0});
  EXPECT_EQ(fuse(a, a, {}).detections.detections[0].score, 1.0);
}

TEST(Fuse, EmptyInEmptyOut) {
  const auto out = fuse({}, {}, {});
  EXPECT_TRUE(out.empty());
  EXPECT_TRUE(out.provenance.empty());
}

TEST(Fuse, PerCategoryThresholds) {
  ConsensusConfig cfg;
  cfg.keep_per_category = {0.95, 0.5};
  DetectionSet s;
  s.detections = {{{0, 0, 10, 10}, 0, 0.8, {0.8, 0.2}}, {{20, 20, 30, 30}, 1, 0.8, {0.2, 0.8}}};
  const auto out = fuse(s, s, cfg);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.detections.detections[0].category, 1);
}

TEST(Fuse, MatchesStepByStepReference) {
  Rng rng(21);
  ConsensusConfig cfg;
  cfg.keep_threshold = 0.3;
  cfg.penalty = 0.7;
  for (int it = 0; it < 250; ++it) {
    auto [st, dy] = correlated_sets(rng, 6);
    expect_same(fuse(st, dy, cfg), oracle::fuse_reference(st, dy, cfg));
  }
}

TEST(Fuse, OutputInvariants) {
  Rng rng(22);
  ConsensusConfig cfg;
  cfg.keep_threshold = 0.4;
  for (int it = 0; it < 200; ++it) {
    auto [st, dy] = correlated_sets(rng, 8);
    const auto out = fuse(st, dy, cfg);
    EXPECT_LE(out.size(), st.size() + dy.size());
    ASSERT_EQ(out.provenance.size(), out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto& d = out.detections.detections[i];
      EXPECT_GE(d.score, cfg.keep_threshold);
      EXPECT_NO_THROW(validate_detection(d, 3));
      for (std::size_t j = i + 1; j < out.size(); ++j)
        if (d.category == out.detections.detections[j].category)
          EXPECT_LE(iou(d.box, out.detections.detections[j].box), cfg.nms_iou);
    }
  }
}

TEST(Fuse, ConsensusScoreNotBelowEitherTeacher) {
  Rng rng(23);
  ConsensusConfig cfg;
  cfg.keep_threshold = 0.05;
  cfg.nms_iou = 0.99;
  for (int it = 0; it < 200; ++it) {
    auto [st, dy] = correlated_sets(rng, 6);
    const auto m = match_teachers(st, dy, cfg.match_iou);
    const auto out = fuse(st, dy, cfg);
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out.provenance[i] != Provenance::Consensus) continue;
      const double s = out.detections.detections[i].score;
      bool found = false;
      for (auto [a, b] : m.pairs)
        if (std::min(1.0, cfg.boost * std::max(st.detections[a].score, dy.detections[b].score)) == s) {
          EXPECT_GE(s, std::min(1.0, std::max(st.detections[a].score, dy.detections[b].score)));
          found = true;
        }
      EXPECT_TRUE(found);
    }
  }
}

TEST(Fuse, SwappingTeachersOnlySwapsSingleTeacherLabels) {
  Rng rng(24);
  ConsensusConfig cfg;
  cfg.keep_threshold = 0.3;
  cfg.penalty = 0.8;
  auto swap_label = [](Provenance p) {
    return p == Provenance::StaticOnly ? Provenance::DynamicOnly
                                       : p == Provenance::DynamicOnly ? Provenance::StaticOnly : p;
  };
  for (int it = 0; it < 250; ++it) {
    auto [st, dy] = correlated_sets(rng, 7);
    const auto a = fuse(st, dy, cfg);
    const auto b = fuse(dy, st, cfg);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a.detections.detections[i], b.detections.detections[i]);
      EXPECT_EQ(a.provenance[i], swap_label(b.provenance[i]));
    }
  }
}

TEST(Fuse, Deterministic) {
  Rng rng(25);
  auto [st, dy] = correlated_sets(rng, 8);
  const auto a = fuse(st, dy, {});
  const auto b = fuse(st, dy, {});
  EXPECT_EQ(a.detections, b.detections);
  EXPECT_EQ(a.provenance, b.provenance);
}

TEST(HardSelect, FiltersByThreshold) {
  DetectionSet s;
  s.detections = {{{0, 0, 10, 10}, 0, 0.95, {1, 0}},
                  {{20, 20, 30, 30}, 0, 0.7, {1, 0}},
                  {{40, 40, 50, 50}, 1, 0.4, {0, 1}}};
  const auto out = hard_select(s, 0.8);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out.detections.detections[0].score, 0.95);
  EXPECT_EQ(out.provenance[0], Provenance::DynamicOnly);
  EXPECT_TRUE(hard_select(s, 0.99).empty());
  EXPECT_EQ(hard_select(s, 1e-9).size(), 3u);
}

TEST(HardSelect, AppliesNms) {
  DetectionSet s;
  s.detections = {{{0, 0, 10, 10}, 0, 0.95, {1, 0}}, {{1, 0, 11, 10}, 0, 0.9, {1, 0}}};
  EXPECT_EQ(hard_select(s, 0.5).size(), 1u);
}

TEST(ConsensusConfig, RejectsOutOfRangeValues) {
  ConsensusConfig c;
  EXPECT_NO_THROW(c.validate());
  c.boost = 0.9;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.penalty = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.keep_threshold = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.match_iou = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
