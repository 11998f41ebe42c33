#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace dla {

/// Axis-aligned box in page pixels, origin top-left. Coordinates are
/// continuous; area is (x_max - x_min) * (y_max - y_min) with no +1 term.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

/// One predicted layout element. `soft_label` is a probability vector over
/// the K categories and `category` is its argmax unless consensus fusion
/// overrides it.
struct Detection {
  Box box;
  int category = 0;
  double score = 0.0;
  std::vector<double> soft_label;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionSet {
  std::string image_id;
  std::vector<Detection> detections;

  std::size_t size() const { return detections.size(); }
  bool empty() const { return detections.empty(); }

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

double iou(const Box& a, const Box& b);

/// Indices of `dets` ordered by descending score; equal scores keep the
/// lower original index first.
std::vector<std::size_t> score_order(const std::vector<Detection>& dets);

/// Greedy non-maximum suppression. Output is ordered by descending score.
DetectionSet nms(const DetectionSet& dets, double iou_threshold, bool per_category);

/// Index-level NMS used by the detector on raw proposals.
std::vector<std::size_t> nms_indices(const std::vector<Box>& boxes,
                                     const std::vector<double>& scores,
                                     double iou_threshold);

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (src, ref)
  std::vector<std::size_t> unmatched_src;
  std::vector<std::size_t> unmatched_ref;
};

/// One-to-one greedy matching. Sources are visited by descending score and
/// each takes the highest-IoU unconsumed reference with IoU >= threshold
/// (lower reference index wins ties).
MatchResult match_greedy(const DetectionSet& src, const DetectionSet& ref,
                         double iou_threshold, bool require_same_category);

/// Throws ContractViolation when a detection breaks its invariants.
void validate_detection(const Detection& det, std::size_t num_categories);

}  // namespace dla
