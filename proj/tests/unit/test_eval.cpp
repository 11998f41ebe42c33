#include <gtest/gtest.h>

#include "dla/errors.hpp"
#include "dla/eval.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dla;

namespace {

Taxonomy two_cats() { return {"t", {"a", "b"}}; }

Detection det(Box b, int c, double s) {
  std::vector<double> soft(2, 0.0);
  soft[c] = 1.0;
  return {b, c, s, soft};
}

}  // namespace

TEST(AveragePrecision, PerfectPredictionsScoreOne) {
  std::vector<GroundTruth> gts{{"1", {0, 0, 10, 10}, 0}, {"1", {20, 20, 30, 30}, 0}};
  std::vector<DetectionSet> preds{{"1", {det({0, 0, 10, 10}, 0, 0.9), det({20, 20, 30, 30}, 0, 0.8)}}};
  EXPECT_DOUBLE_EQ(*average_precision(preds, gts, 0), 1.0);
}

TEST(AveragePrecision, NoGroundTruthIsUndefined) {
  EXPECT_FALSE(average_precision({}, {}, 0).has_value());
}

TEST(AveragePrecision, NoPredictionsScoreZero) {
  std::vector<GroundTruth> gts{{"1", {0, 0, 10, 10}, 0}};
  EXPECT_EQ(*average_precision({}, gts, 0), 0.0);
}

TEST(AveragePrecision, HalfRecallWithFalsePositiveFirst) {
  std::vector<GroundTruth> gts{{"1", {0, 0, 10, 10}, 0}, {"1", {20, 20, 30, 30}, 0}};
  std::vector<DetectionSet> preds{{"1", {det({50, 50, 60, 60}, 0, 0.9), det({0, 0, 10, 10}, 0, 0.8)}}};
  // Precision 1/2 at recall 1/2.
  EXPECT_DOUBLE_EQ(*average_precision(preds, gts, 0), 0.25);
}

TEST(AveragePrecision, DuplicateDetectionIsFalsePositive) {
  std::vector<GroundTruth> gts{{"1", {0, 0, 10, 10}, 0}};
  std::vector<DetectionSet> preds{{"1", {det({0, 0, 10, 10}, 0, 0.9), det({0, 0, 10, 10}, 0, 0.8)}}};
  EXPECT_DOUBLE_EQ(*average_precision(preds, gts, 0), 1.0);
}

TEST(AveragePrecision, MatchesBruteForceOracle) {
  Rng rng(31);
  for (int it = 0; it < 250; ++it) {
    std::vector<GroundTruth> gts;
    std::vector<DetectionSet> preds;
    const int n_img = static_cast<int>(rng.uniform_int(1, 3));
    for (int im = 0; im < n_img; ++im) {
      DetectionSet s;
      s.image_id = std::to_string(im);
      const auto n_gt = rng.uniform_int(0, 4);
      std::vector<Box> boxes;
      for (int g = 0; g < n_gt; ++g) {
        boxes.push_back(dla::testing::random_box(rng));
        gts.push_back({s.image_id, boxes.back(), static_cast<int>(rng.uniform_int(0, 1))});
      }
      const auto n_pred = rng.uniform_int(0, 10 / n_img);
      for (int p = 0; p < n_pred; ++p) {
        Box b = (!boxes.empty() && rng.bernoulli(0.6)) ? dla::testing::jitter(rng, boxes[rng.uniform_int(0, boxes.size() - 1)], 0.15)
                                                      : dla::testing::random_box(rng);
        s.detections.push_back(det(b, static_cast<int>(rng.uniform_int(0, 1)), rng.uniform()));
      }
      preds.push_back(s);
    }
    for (int c = 0; c < 2; ++c) {
      const auto got = average_precision(preds, gts, c);
      const auto expect = oracle::ap_bruteforce(preds, gts, c);
      ASSERT_EQ(got.has_value(), expect.has_value());
      if (got) {
        EXPECT_NEAR(*got, *expect, 1e-9);
      }
    }
  }
}

TEST(Map50, AveragesCategoriesWithGroundTruth) {
  std::vector<GroundTruth> gts{{"1", {0, 0, 10, 10}, 0}};
  std::vector<DetectionSet> preds{{"1", {det({0, 0, 10, 10}, 0, 0.9)}}};
  const auto r = map50(preds, gts, two_cats());
  EXPECT_EQ(r.ap.size(), 1u);
  EXPECT_DOUBLE_EQ(r.map50, 1.0);
  EXPECT_EQ(r.gt_counts.at(1), 0);
}

TEST(Map50, NoGroundTruthAnywhereIsAnError) {
  EXPECT_THROW(map50({}, {}, two_cats()), EvaluationError);
}

TEST(Map50, WrongCategoryEarnsNothing) {
  std::vector<GroundTruth> gts{{"1", {0, 0, 10, 10}, 0}};
  std::vector<DetectionSet> preds{{"1", {det({0, 0, 10, 10}, 1, 0.9)}}};
  EXPECT_EQ(map50(preds, gts, two_cats()).map50, 0.0);
}

TEST(FormatEvalTable, ListsCategoriesAndPercent) {
  EvalResult r;
  r.ap[0] = 0.5;
  r.map50 = 0.5;
  const auto text = format_eval_table(r, two_cats(), "x");
  EXPECT_NE(text.find("50.00"), std::string::npos);
  EXPECT_NE(text.find(" -"), std::string::npos);
}
