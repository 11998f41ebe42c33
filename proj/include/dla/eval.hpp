#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dla/geometry.hpp"
#include "dla/labelspace.hpp"

namespace dla {

struct GroundTruth {
  std::string image_id;
  Box box;
  int category = 0;
};

struct EvalResult {
  std::map<int, double> ap;         // only categories with at least one GT
  std::map<int, int> gt_counts;     // every category of the taxonomy
  double map50 = 0.0;
};

/// All-point interpolated AP for one category. Predictions are matched in
/// global descending-score order to the best unmatched GT of the same image
/// and category. Returns nullopt when the category has no ground truth.
std::optional<double> average_precision(const std::vector<DetectionSet>& preds,
                                        const std::vector<GroundTruth>& gts, int category,
                                        double iou_threshold = 0.5);

/// Throws EvaluationError when no category has ground truth.
EvalResult map50(const std::vector<DetectionSet>& preds, const std::vector<GroundTruth>& gts,
                 const Taxonomy& taxonomy);

std::vector<GroundTruth> ground_truth_of(const Dataset& ds);

/// Human-readable per-category table (category columns, then mAP50).
std::string format_eval_table(const EvalResult& r, const Taxonomy& taxonomy, const std::string& label);

}  // namespace dla
