#include "dla/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dla/errors.hpp"

namespace dla {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Configuration: return "configuration";
    case ErrorKind::Ingestion: return "ingestion";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::IO: return "io";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Evaluation: return "evaluation";
  }
  return "unknown";
}

bool Box::valid() const {
  return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
         std::isfinite(y_max) && x_min <= x_max && y_min <= y_max;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = (iw > 0.0 && ih > 0.0) ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

DetectionSet nms(const DetectionSet& dets, double iou_threshold, bool per_category) {
  DetectionSet out;
  out.image_id = dets.image_id;
  for (std::size_t idx : score_order(dets.detections)) {
    const Detection& cand = dets.detections[idx];
    bool suppressed = false;
    for (const Detection& kept : out.detections) {
      if (per_category && kept.category != cand.category) continue;
      if (iou(kept.box, cand.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) out.detections.push_back(cand);
  }
  return out;
}

std::vector<std::size_t> nms_indices(const std::vector<Box>& boxes,
                                     const std::vector<double>& scores,
                                     double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> keep;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : keep) {
      if (iou(boxes[k], boxes[idx]) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) keep.push_back(idx);
  }
  return keep;
}

MatchResult match_greedy(const DetectionSet& src, const DetectionSet& ref,
                         double iou_threshold, bool require_same_category) {
  MatchResult result;
  std::vector<bool> ref_used(ref.size(), false);
  std::vector<bool> src_used(src.size(), false);
  for (std::size_t s : score_order(src.detections)) {
    const Detection& sd = src.detections[s];
    double best = -1.0;
    std::size_t best_ref = 0;
    for (std::size_t r = 0; r < ref.size(); ++r) {
      if (ref_used[r]) continue;
      const Detection& rd = ref.detections[r];
      if (require_same_category && rd.category != sd.category) continue;
      const double v = iou(sd.box, rd.box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_ref = r;
      }
    }
    if (best >= 0.0) {
      ref_used[best_ref] = true;
      src_used[s] = true;
      result.pairs.emplace_back(s, best_ref);
    }
  }
  for (std::size_t s = 0; s < src.size(); ++s)
    if (!src_used[s]) result.unmatched_src.push_back(s);
  for (std::size_t r = 0; r < ref.size(); ++r)
    if (!ref_used[r]) result.unmatched_ref.push_back(r);
  return result;
}

void validate_detection(const Detection& det, std::size_t num_categories) {
  if (!det.box.valid()) throw ContractViolation("detection box is not a valid box");
  if (!(det.score >= 0.0 && det.score <= 1.0))
    throw ContractViolation("detection score outside [0,1]");
  if (det.soft_label.size() != num_categories)
    throw ContractViolation("soft label dimension does not match category count");
  double sum = 0.0;
  for (double p : det.soft_label) {
    if (!(p >= 0.0)) throw ContractViolation("negative soft label entry");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ContractViolation("soft label does not sum to 1");
  if (det.category < 0 || static_cast<std::size_t>(det.category) >= num_categories)
    throw ContractViolation("detection category out of range");
}

}  // namespace dla
