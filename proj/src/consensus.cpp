#include "dla/consensus.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <tuple>

#include "dla/errors.hpp"

namespace dla {

const char* to_string(Provenance p) noexcept {
  switch (p) {
    case Provenance::Consensus: return "consensus";
    case Provenance::StaticOnly: return "static-only";
    case Provenance::DynamicOnly: return "dynamic-only";
  }
  return "?";
}

double ConsensusConfig::threshold_for(int category) const {
  if (keep_per_category.empty()) return keep_threshold;
  if (category < 0 || static_cast<std::size_t>(category) >= keep_per_category.size())
    throw ContractViolation("no keep threshold for category " + std::to_string(category));
  return keep_per_category[category];
}

void ConsensusConfig::validate() const {
  if (!(match_iou > 0.0 && match_iou < 1.0)) throw ConfigError("consensus.match_iou must lie in (0,1)");
  if (!(boost >= 1.0)) throw ConfigError("consensus.boost must be >= 1");
  if (!(penalty >= 0.0 && penalty <= 1.0)) throw ConfigError("consensus.penalty must lie in [0,1]");
  if (!(keep_threshold > 0.0 && keep_threshold < 1.0))
    throw ConfigError("consensus.keep_threshold must lie in (0,1)");
  for (double t : keep_per_category)
    if (!(t > 0.0 && t < 1.0)) throw ConfigError("consensus.keep_per_category entries must lie in (0,1)");
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("consensus.nms_iou must lie in (0,1]");
}

std::size_t PseudoLabelSet::count(Provenance p) const {
  return static_cast<std::size_t>(std::count(provenance.begin(), provenance.end(), p));
}

MatchResult match_teachers(const DetectionSet& r_static, const DetectionSet& r_dynamic,
                           double iou_threshold) {
  const DetectionSet* sets[2] = {&r_static, &r_dynamic};
  std::vector<bool> used[2] = {std::vector<bool>(r_static.size(), false),
                               std::vector<bool>(r_dynamic.size(), false)};
  struct Item {
    int side;
    std::size_t index;
    double score;
  };
  std::vector<Item> order;
  for (int s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < sets[s]->size(); ++i) order.push_back({s, i, sets[s]->detections[i].score});
  std::stable_sort(order.begin(), order.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  MatchResult result;
  for (const auto& it : order) {
    if (used[it.side][it.index]) continue;
    const int other = 1 - it.side;
    const auto& d = sets[it.side]->detections[it.index];
    double best = -1.0;
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < sets[other]->size(); ++j) {
      if (used[other][j]) continue;
      const auto& e = sets[other]->detections[j];
      if (e.category != d.category) continue;
      const double v = iou(d.box, e.box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_j = j;
      }
    }
    if (best < 0.0) continue;
    used[it.side][it.index] = used[other][best_j] = true;
    if (it.side == 0)
      result.pairs.emplace_back(it.index, best_j);
    else
      result.pairs.emplace_back(best_j, it.index);
  }
  for (std::size_t i = 0; i < r_static.size(); ++i)
    if (!used[0][i]) result.unmatched_src.push_back(i);
  for (std::size_t j = 0; j < r_dynamic.size(); ++j)
    if (!used[1][j]) result.unmatched_ref.push_back(j);
  return result;
}

namespace {

Detection fuse_pair(const Detection& a, const Detection& b, double boost) {
  Detection out;
  const double wsum = a.score + b.score;
  const double wa = wsum > 0.0 ? a.score / wsum : 0.5;
  const double wb = wsum > 0.0 ? b.score / wsum : 0.5;
  // Rounding may step outside both inputs (e.g. past the page edge).
  auto mix = [&](double u, double v) { return std::clamp(wa * u + wb * v, std::min(u, v), std::max(u, v)); };
  out.box = {mix(a.box.x_min, b.box.x_min), mix(a.box.y_min, b.box.y_min), mix(a.box.x_max, b.box.x_max),
             mix(a.box.y_max, b.box.y_max)};
  out.category = a.category;
  out.score = std::min(1.0, boost * std::max(a.score, b.score));
  const std::size_t k = std::max(a.soft_label.size(), b.soft_label.size());
  out.soft_label.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const double pa = i < a.soft_label.size() ? a.soft_label[i] : 0.0;
    const double pb = i < b.soft_label.size() ? b.soft_label[i] : 0.0;
    out.soft_label[i] = 0.5 * (pa + pb);
  }
  const double total = std::accumulate(out.soft_label.begin(), out.soft_label.end(), 0.0);
  if (total > 0.0)
    for (double& p : out.soft_label) p /= total;
  return out;
}

// Content-based order so the result does not depend on which teacher was
// passed first.
bool before(const Detection& a, const Detection& b) {
  return std::tie(b.score, a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max, a.category) <
         std::tie(a.score, b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max, b.category);
}

PseudoLabelSet per_category_nms(std::string image_id, std::vector<Detection> dets,
                                std::vector<Provenance> prov, double nms_iou) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return before(dets[i], dets[j]); });
  PseudoLabelSet out;
  out.detections.image_id = std::move(image_id);
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (const auto& k : out.detections.detections)
      if (k.category == dets[idx].category && iou(k.box, dets[idx].box) > nms_iou) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;
    out.detections.detections.push_back(std::move(dets[idx]));
    out.provenance.push_back(prov[idx]);
  }
  return out;
}

}  // namespace

PseudoLabelSet fuse(const DetectionSet& r_static, const DetectionSet& r_dynamic,
                    const ConsensusConfig& cfg) {
  const MatchResult m = match_teachers(r_static, r_dynamic, cfg.match_iou);
  std::vector<Detection> cand;
  std::vector<Provenance> prov;
  auto keep = [&](Detection d, Provenance p) {
    if (d.score < cfg.threshold_for(d.category)) return;
    cand.push_back(std::move(d));
    prov.push_back(p);
  };
  for (auto [i, j] : m.pairs)
    keep(fuse_pair(r_static.detections[i], r_dynamic.detections[j], cfg.boost), Provenance::Consensus);
  for (std::size_t i : m.unmatched_src) {
    Detection d = r_static.detections[i];
    d.score *= cfg.penalty;
    keep(std::move(d), Provenance::StaticOnly);
  }
  for (std::size_t j : m.unmatched_ref) {
    Detection d = r_dynamic.detections[j];
    d.score *= cfg.penalty;
    keep(std::move(d), Provenance::DynamicOnly);
  }
  const std::string& id = r_static.image_id.empty() ? r_dynamic.image_id : r_static.image_id;
  return per_category_nms(id, std::move(cand), std::move(prov), cfg.nms_iou);
}

PseudoLabelSet hard_select(const DetectionSet& r_dynamic, double threshold, double nms_iou) {
  std::vector<Detection> cand;
  for (const auto& d : r_dynamic.detections)
    if (d.score >= threshold) cand.push_back(d);
  std::vector<Provenance> prov(cand.size(), Provenance::DynamicOnly);
  return per_category_nms(r_dynamic.image_id, std::move(cand), std::move(prov), nms_iou);
}

}  // namespace dla
