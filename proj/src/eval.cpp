#include "dla/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "dla/errors.hpp"

namespace dla {

std::optional<double> average_precision(const std::vector<DetectionSet>& preds,
                                        const std::vector<GroundTruth>& gts, int category,
                                        double iou_threshold) {
  std::unordered_map<std::string, std::vector<Box>> gt_by_image;
  std::size_t n_gt = 0;
  for (const auto& g : gts)
    if (g.category == category) {
      gt_by_image[g.image_id].push_back(g.box);
      ++n_gt;
    }
  if (n_gt == 0) return std::nullopt;

  struct Pred {
    const std::string* image;
    const Box* box;
    double score;
  };
  std::vector<Pred> flat;
  for (const auto& set : preds)
    for (const auto& d : set.detections)
      if (d.category == category) flat.push_back({&set.image_id, &d.box, d.score});
  std::stable_sort(flat.begin(), flat.end(),
                   [](const Pred& a, const Pred& b) { return a.score > b.score; });

  std::unordered_map<std::string, std::vector<bool>> used;
  for (const auto& [img, boxes] : gt_by_image) used[img].assign(boxes.size(), false);

  std::vector<double> precision, recall;
  precision.reserve(flat.size());
  recall.reserve(flat.size());
  std::size_t tp = 0, fp = 0;
  for (const auto& p : flat) {
    bool hit = false;
    auto it = gt_by_image.find(*p.image);
    if (it != gt_by_image.end()) {
      auto& flags = used[*p.image];
      double best = -1.0;
      std::size_t best_i = 0;
      for (std::size_t i = 0; i < it->second.size(); ++i) {
        if (flags[i]) continue;
        const double v = iou(*p.box, it->second[i]);
        if (v >= iou_threshold && v > best) {
          best = v;
          best_i = i;
        }
      }
      if (best >= 0.0) {
        flags[best_i] = true;
        hit = true;
      }
    }
    hit ? ++tp : ++fp;
    precision.push_back(double(tp) / double(tp + fp));
    recall.push_back(double(tp) / double(n_gt));
  }

  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

EvalResult map50(const std::vector<DetectionSet>& preds, const std::vector<GroundTruth>& gts,
                 const Taxonomy& taxonomy) {
  EvalResult r;
  for (std::size_t c = 0; c < taxonomy.size(); ++c) r.gt_counts[static_cast<int>(c)] = 0;
  for (const auto& g : gts) ++r.gt_counts[g.category];
  double sum = 0.0;
  for (std::size_t c = 0; c < taxonomy.size(); ++c) {
    const auto ap = average_precision(preds, gts, static_cast<int>(c), 0.5);
    if (ap) {
      r.ap[static_cast<int>(c)] = *ap;
      sum += *ap;
    }
  }
  if (r.ap.empty()) throw EvaluationError("no category has ground truth; mAP is undefined");
  r.map50 = sum / r.ap.size();
  return r;
}

std::vector<GroundTruth> ground_truth_of(const Dataset& ds) {
  std::vector<GroundTruth> out;
  out.reserve(ds.annotations.size());
  for (const auto& a : ds.annotations) out.push_back({std::to_string(a.image_id), a.box, a.category});
  return out;
}

std::string format_eval_table(const EvalResult& r, const Taxonomy& taxonomy, const std::string& label) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-16s", "method");
  out += buf;
  for (const auto& c : taxonomy.categories) {
    std::snprintf(buf, sizeof buf, " %14s", c.c_str());
    out += buf;
  }
  out += "          mAP50\n";
  std::snprintf(buf, sizeof buf, "%-16s", label.c_str());
  out += buf;
  for (std::size_t c = 0; c < taxonomy.size(); ++c) {
    auto it = r.ap.find(static_cast<int>(c));
    if (it == r.ap.end())
      std::snprintf(buf, sizeof buf, " %14s", "-");
    else
      std::snprintf(buf, sizeof buf, " %14.2f", 100.0 * it->second);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, " %14.2f\n", 100.0 * r.map50);
  out += buf;
  return out;
}

}  // namespace dla
