#pragma once

#include <vector>

#include "dla/geometry.hpp"

namespace dla {

struct ConsensusConfig {
  double match_iou = 0.5;
  double boost = 1.1;
  double penalty = 0.5;
  double keep_threshold = 0.6;
  double nms_iou = 0.5;
  /// Optional per-category floors; empty means keep_threshold for all.
  std::vector<double> keep_per_category;

  double threshold_for(int category) const;
  void validate() const;
};

enum class Provenance { Consensus, StaticOnly, DynamicOnly };

const char* to_string(Provenance p) noexcept;

struct PseudoLabelSet {
  DetectionSet detections;
  std::vector<Provenance> provenance;  // aligned with detections

  std::size_t size() const { return detections.size(); }
  bool empty() const { return detections.empty(); }
  std::size_t count(Provenance p) const;
};

/// Pairs detections of the same category across the two teachers. All
/// detections of both sets are visited together in descending score order;
/// an unpaired one takes the highest-IoU unpaired partner of the other set
/// with IoU >= threshold. Pairs are returned as (static, dynamic) indices.
MatchResult match_teachers(const DetectionSet& r_static, const DetectionSet& r_dynamic,
                           double iou_threshold);

/// match -> fuse pairs (boosted score, score-weighted box, averaged soft
/// label) -> penalize unmatched -> drop below threshold -> per-category NMS.
/// Output is in descending score order.
PseudoLabelSet fuse(const DetectionSet& r_static, const DetectionSet& r_dynamic,
                    const ConsensusConfig& cfg);

/// Dynamic-teacher detections with score >= threshold, after per-category NMS.
PseudoLabelSet hard_select(const DetectionSet& r_dynamic, double threshold, double nms_iou = 0.5);

}  // namespace dla
