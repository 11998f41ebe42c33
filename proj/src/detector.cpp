#include "dla/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "dla/rng.hpp"
#include "nn.hpp"

namespace dla {

using nn::ConvShape;
using nn::MapConstMat;
using nn::MapMat;
using nn::RowMat;

namespace {

constexpr double kRoiBoxWeights[4] = {10.0, 10.0, 5.0, 5.0};
constexpr double kRpnBeta = 1.0 / 9.0;
constexpr double kRoiBeta = 1.0;
const double kMaxLogScale = std::log(1000.0 / 16.0);

std::array<double, 4> encode(const Box& ref, const Box& gt, const double* w) {
  const double rw = std::max(ref.width(), 1e-6), rh = std::max(ref.height(), 1e-6);
  const double gw = std::max(gt.width(), 1e-6), gh = std::max(gt.height(), 1e-6);
  const double rcx = ref.x_min + 0.5 * rw, rcy = ref.y_min + 0.5 * rh;
  const double gcx = gt.x_min + 0.5 * gw, gcy = gt.y_min + 0.5 * gh;
  return {w[0] * (gcx - rcx) / rw, w[1] * (gcy - rcy) / rh, w[2] * std::log(gw / rw),
          w[3] * std::log(gh / rh)};
}

Box decode(const Box& ref, const double* d, const double* w) {
  const double rw = ref.width(), rh = ref.height();
  const double cx = ref.x_min + 0.5 * rw + (d[0] / w[0]) * rw;
  const double cy = ref.y_min + 0.5 * rh + (d[1] / w[1]) * rh;
  const double bw = rw * std::exp(std::min(d[2] / w[2], kMaxLogScale));
  const double bh = rh * std::exp(std::min(d[3] / w[3], kMaxLogScale));
  return {cx - 0.5 * bw, cy - 0.5 * bh, cx + 0.5 * bw, cy + 0.5 * bh};
}

Box clip(const Box& b, double w, double h) {
  Box c{std::clamp(b.x_min, 0.0, w), std::clamp(b.y_min, 0.0, h), std::clamp(b.x_max, 0.0, w),
        std::clamp(b.y_max, 0.0, h)};
  if (c.x_max < c.x_min) c.x_max = c.x_min;
  if (c.y_max < c.y_min) c.y_max = c.y_min;
  return c;
}

constexpr double kUnitWeights[4] = {1.0, 1.0, 1.0, 1.0};

}  // namespace

// ---------------------------------------------------------------------------
// Config

int DetectorConfig::feature_stride() const {
  const int downs = std::min<int>(3, static_cast<int>(channels.size()));
  return input_pool * (1 << downs);
}

void DetectorConfig::validate() const {
  if (input_channels < 1 || input_height < 1 || input_width < 1)
    throw ConfigError("detector input shape must be positive");
  if (num_classes < 1) throw ConfigError("detector needs at least one category");
  if (input_pool < 1 || input_height % input_pool || input_width % input_pool)
    throw ConfigError("input_pool must divide the input size");
  if (channels.empty()) throw ConfigError("detector needs at least one backbone stage");
  for (int c : channels)
    if (c < 1) throw ConfigError("backbone channels must be positive");
  if (anchors.empty()) throw ConfigError("detector needs at least one anchor shape");
  if (roi_pool < 1 || roi_hidden < 1 || roi_batch < 1) throw ConfigError("invalid region head size");
  if (!(score_floor >= 0.0 && score_floor < 1.0)) throw ConfigError("score_floor outside [0,1)");
  if (max_detections < 1) throw ConfigError("max_detections must be >= 1");
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw ConfigError("nms_iou outside (0,1)");
}

std::string DetectorConfig::to_json() const {
  nlohmann::json j;
  j["input_height"] = input_height;
  j["input_width"] = input_width;
  j["input_channels"] = input_channels;
  j["num_classes"] = num_classes;
  j["input_pool"] = input_pool;
  j["pixel_mean"] = pixel_mean;
  j["pixel_scale"] = pixel_scale;
  j["channels"] = channels;
  j["anchors"] = nlohmann::json::array();
  for (const auto& a : anchors) j["anchors"].push_back({a.width, a.height});
  j["roi_pool"] = roi_pool;
  j["roi_hidden"] = roi_hidden;
  j["rpn_pos_iou"] = rpn_pos_iou;
  j["rpn_neg_iou"] = rpn_neg_iou;
  j["rpn_neg_per_pos"] = rpn_neg_per_pos;
  j["rpn_min_neg"] = rpn_min_neg;
  j["train_pre_nms"] = train_pre_nms;
  j["train_post_nms"] = train_post_nms;
  j["infer_pre_nms"] = infer_pre_nms;
  j["infer_post_nms"] = infer_post_nms;
  j["proposal_nms_iou"] = proposal_nms_iou;
  j["roi_fg_iou"] = roi_fg_iou;
  j["roi_batch"] = roi_batch;
  j["roi_fg_fraction"] = roi_fg_fraction;
  j["score_floor"] = score_floor;
  j["max_detections"] = max_detections;
  j["nms_iou"] = nms_iou;
  return j.dump();
}

DetectorConfig DetectorConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("detector config is not valid JSON: ") + e.what());
  }
  DetectorConfig c;
  try {
    c.input_height = j.at("input_height");
    c.input_width = j.at("input_width");
    c.input_channels = j.at("input_channels");
    c.num_classes = j.at("num_classes");
    c.input_pool = j.at("input_pool");
    c.pixel_mean = j.at("pixel_mean");
    c.pixel_scale = j.at("pixel_scale");
    c.channels = j.at("channels").get<std::vector<int>>();
    c.anchors.clear();
    for (const auto& a : j.at("anchors")) c.anchors.push_back({a.at(0), a.at(1)});
    c.roi_pool = j.at("roi_pool");
    c.roi_hidden = j.at("roi_hidden");
    c.rpn_pos_iou = j.at("rpn_pos_iou");
    c.rpn_neg_iou = j.at("rpn_neg_iou");
    c.rpn_neg_per_pos = j.at("rpn_neg_per_pos");
    c.rpn_min_neg = j.at("rpn_min_neg");
    c.train_pre_nms = j.at("train_pre_nms");
    c.train_post_nms = j.at("train_post_nms");
    c.infer_pre_nms = j.at("infer_pre_nms");
    c.infer_post_nms = j.at("infer_post_nms");
    c.proposal_nms_iou = j.at("proposal_nms_iou");
    c.roi_fg_iou = j.at("roi_fg_iou");
    c.roi_batch = j.at("roi_batch");
    c.roi_fg_fraction = j.at("roi_fg_fraction");
    c.score_floor = j.at("score_floor");
    c.max_detections = j.at("max_detections");
    c.nms_iou = j.at("nms_iou");
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("detector config incomplete: ") + e.what());
  }
  return c;
}

DetectorConfig DetectorConfig::micro() {
  DetectorConfig c;
  c.input_height = 8;
  c.input_width = 8;
  c.num_classes = 2;
  c.input_pool = 1;
  c.channels = {2, 3, 4};
  c.anchors = {{4, 4}, {8, 4}, {6, 8}};
  c.roi_pool = 2;
  c.roi_hidden = 5;
  c.rpn_min_neg = 4;
  c.train_pre_nms = 50;
  c.train_post_nms = 8;
  c.infer_pre_nms = 50;
  c.infer_post_nms = 8;
  c.roi_batch = 8;
  c.roi_fg_fraction = 0.5;
  return c;
}

// ---------------------------------------------------------------------------
// Internal structure

struct Detector::Impl {
  DetectorConfig cfg;
  std::vector<ConvShape> convs;
  int in_h = 0, in_w = 0;      // after input pooling
  int feat_h = 0, feat_w = 0;  // backbone output
  int feat_c = 0;
  double stride = 1.0;
  int num_anchor_shapes = 0;
  std::vector<Box> anchors;  // index = a * HW + y * W + x

  int hw() const { return feat_h * feat_w; }
  int num_anchors() const { return static_cast<int>(anchors.size()); }
  int roi_dim() const { return feat_c * cfg.roi_pool * cfg.roi_pool; }

  explicit Impl(const DetectorConfig& c) : cfg(c) {
    cfg.validate();
    in_h = cfg.input_height / cfg.input_pool;
    in_w = cfg.input_width / cfg.input_pool;
    int h = in_h, w = in_w, ch = cfg.input_channels;
    int dilation = 1;
    for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
      ConvShape s;
      s.in_c = ch;
      s.out_c = cfg.channels[i];
      s.k = 3;
      if (i < 3) {
        s.stride = 2;
        s.dilation = 1;
      } else {
        dilation *= 2;
        s.stride = 1;
        s.dilation = dilation;
      }
      s.pad = s.dilation;
      s.in_h = h;
      s.in_w = w;
      convs.push_back(s);
      h = s.out_h();
      w = s.out_w();
      ch = s.out_c;
    }
    feat_h = h;
    feat_w = w;
    feat_c = ch;
    stride = cfg.feature_stride();
    num_anchor_shapes = static_cast<int>(cfg.anchors.size());
    anchors.reserve(static_cast<std::size_t>(num_anchor_shapes) * hw());
    for (const auto& a : cfg.anchors)
      for (int y = 0; y < feat_h; ++y)
        for (int x = 0; x < feat_w; ++x) {
          const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
          anchors.push_back({cx - 0.5 * a.width, cy - 0.5 * a.height, cx + 0.5 * a.width,
                             cy + 0.5 * a.height});
        }
  }

  std::string conv_name(std::size_t i) const { return "backbone.conv" + std::to_string(i + 1); }

  void check_image(const Image& img) const {
    if (img.channels() != cfg.input_channels || img.height() != cfg.input_height ||
        img.width() != cfg.input_width)
      throw ContractViolation("image shape " + std::to_string(img.channels()) + "x" +
                              std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                              " does not match detector input " +
                              std::to_string(cfg.input_channels) + "x" +
                              std::to_string(cfg.input_height) + "x" +
                              std::to_string(cfg.input_width));
  }

  std::vector<double> preprocess(const Image& img) const {
    const int p = cfg.input_pool;
    std::vector<double> out(static_cast<std::size_t>(cfg.input_channels) * in_h * in_w);
    const double norm = 1.0 / (p * p);
    for (int c = 0; c < cfg.input_channels; ++c)
      for (int y = 0; y < in_h; ++y)
        for (int x = 0; x < in_w; ++x) {
          double s = 0.0;
          for (int dy = 0; dy < p; ++dy)
            for (int dx = 0; dx < p; ++dx) s += img.at(c, y * p + dy, x * p + dx);
          out[(static_cast<std::size_t>(c) * in_h + y) * in_w + x] =
              (s * norm - cfg.pixel_mean) * cfg.pixel_scale;
        }
    return out;
  }

  struct Backbone {
    std::vector<double> input;
    std::vector<std::vector<double>> cols;
    std::vector<std::vector<double>> acts;
    const std::vector<double>& features() const { return acts.back(); }
  };

  Backbone backbone(const ModelParameters& p, const Image& img) const {
    Backbone b;
    b.input = preprocess(img);
    b.cols.resize(convs.size());
    b.acts.resize(convs.size());
    const double* in = b.input.data();
    for (std::size_t i = 0; i < convs.size(); ++i) {
      const std::string n = conv_name(i);
      nn::conv_relu_forward(in, convs[i], p.at(n + ".weight").values.data(),
                            p.at(n + ".bias").values.data(), b.cols[i], b.acts[i]);
      in = b.acts[i].data();
    }
    return b;
  }

  struct RpnOut {
    std::vector<double> obj;    // A x HW
    std::vector<double> delta;  // 4A x HW
  };

  RpnOut rpn(const ModelParameters& p, const std::vector<double>& feat) const {
    RpnOut r;
    const int A = num_anchor_shapes, n = hw();
    r.obj.resize(static_cast<std::size_t>(A) * n);
    r.delta.resize(static_cast<std::size_t>(4) * A * n);
    MapConstMat f(feat.data(), feat_c, n);
    {
      MapMat o(r.obj.data(), A, n);
      o.noalias() = MapConstMat(p.at("rpn.obj.weight").values.data(), A, feat_c) * f;
      const auto& b = p.at("rpn.obj.bias").values;
      for (int a = 0; a < A; ++a) o.row(a).array() += b[a];
    }
    {
      MapMat d(r.delta.data(), 4 * A, n);
      d.noalias() = MapConstMat(p.at("rpn.delta.weight").values.data(), 4 * A, feat_c) * f;
      const auto& b = p.at("rpn.delta.bias").values;
      for (int a = 0; a < 4 * A; ++a) d.row(a).array() += b[a];
    }
    return r;
  }

  // Delta j of anchor i lives at row (a*4 + j), column (y*W + x).
  void anchor_delta(const RpnOut& r, int i, double* d) const {
    const int n = hw();
    const int a = i / n, pos = i % n;
    for (int j = 0; j < 4; ++j) d[j] = r.delta[static_cast<std::size_t>(a * 4 + j) * n + pos];
  }

  std::vector<Box> proposals(const RpnOut& r, bool training) const {
    const int na = num_anchors();
    const double W = cfg.input_width, H = cfg.input_height;
    std::vector<Box> boxes;
    std::vector<double> scores;
    boxes.reserve(na);
    scores.reserve(na);
    for (int i = 0; i < na; ++i) {
      double d[4];
      anchor_delta(r, i, d);
      const Box b = clip(decode(anchors[i], d, kUnitWeights), W, H);
      if (b.width() < 1.0 || b.height() < 1.0) continue;
      boxes.push_back(b);
      scores.push_back(r.obj[i]);
    }
    const int pre = training ? cfg.train_pre_nms : cfg.infer_pre_nms;
    const int post = training ? cfg.train_post_nms : cfg.infer_post_nms;
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    if (static_cast<int>(order.size()) > pre) order.resize(pre);
    std::vector<Box> top_boxes;
    std::vector<double> top_scores;
    for (std::size_t i : order) {
      top_boxes.push_back(boxes[i]);
      top_scores.push_back(scores[i]);
    }
    auto keep = nn_keep(top_boxes, top_scores);
    if (static_cast<int>(keep.size()) > post) keep.resize(post);
    std::vector<Box> out;
    for (std::size_t k : keep) out.push_back(top_boxes[k]);
    return out;
  }

  std::vector<std::size_t> nn_keep(const std::vector<Box>& b, const std::vector<double>& s) const {
    return nms_indices(b, s, cfg.proposal_nms_iou);
  }

  struct RoiOut {
    std::vector<nn::RoiPlan> plans;
    RowMat pooled;  // R x roi_dim
    RowMat hidden;  // R x H (post-ReLU)
    RowMat logits;  // R x (K+1)
    RowMat deltas;  // R x 4
  };

  RowMat pool_regions(const std::vector<double>& feat, const std::vector<Box>& boxes,
                      std::vector<nn::RoiPlan>& plans) const {
    RowMat pooled(static_cast<Eigen::Index>(boxes.size()), roi_dim());
    plans.clear();
    for (std::size_t r = 0; r < boxes.size(); ++r) {
      plans.push_back(nn::roi_align_plan(boxes[r], feat_h, feat_w, stride, cfg.roi_pool));
      nn::roi_align_forward(feat.data(), feat_c, hw(), plans.back(), pooled.row(r).data());
    }
    return pooled;
  }

  Rows region_means(const RowMat& pooled) const {
    const int bins = cfg.roi_pool * cfg.roi_pool;
    Rows out(static_cast<std::size_t>(pooled.rows()), std::vector<double>(feat_c, 0.0));
    for (Eigen::Index r = 0; r < pooled.rows(); ++r)
      for (int c = 0; c < feat_c; ++c) {
        double s = 0.0;
        for (int b = 0; b < bins; ++b) s += pooled(r, c * bins + b);
        out[r][c] = s / bins;
      }
    return out;
  }

  std::vector<double> image_feature(const std::vector<double>& feat) const {
    std::vector<double> out(feat_c);
    const int n = hw();
    for (int c = 0; c < feat_c; ++c) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += feat[static_cast<std::size_t>(c) * n + i];
      out[c] = s / n;
    }
    return out;
  }

  RoiOut roi_head(const ModelParameters& p, const std::vector<double>& feat,
                  const std::vector<Box>& boxes) const {
    RoiOut o;
    o.pooled = pool_regions(feat, boxes, o.plans);
    const int K1 = cfg.num_classes + 1, Hd = cfg.roi_hidden;
    MapConstMat w1(p.at("roi.fc.weight").values.data(), Hd, roi_dim());
    o.hidden = o.pooled * w1.transpose();
    const auto& b1 = p.at("roi.fc.bias").values;
    for (Eigen::Index r = 0; r < o.hidden.rows(); ++r)
      for (int j = 0; j < Hd; ++j) o.hidden(r, j) = std::max(o.hidden(r, j) + b1[j], 0.0);
    MapConstMat wc(p.at("roi.cls.weight").values.data(), K1, Hd);
    o.logits = o.hidden * wc.transpose();
    const auto& bc = p.at("roi.cls.bias").values;
    for (Eigen::Index r = 0; r < o.logits.rows(); ++r)
      for (int j = 0; j < K1; ++j) o.logits(r, j) += bc[j];
    MapConstMat wb(p.at("roi.box.weight").values.data(), 4, Hd);
    o.deltas = o.hidden * wb.transpose();
    const auto& bb = p.at("roi.box.bias").values;
    for (Eigen::Index r = 0; r < o.deltas.rows(); ++r)
      for (int j = 0; j < 4; ++j) o.deltas(r, j) += bb[j];
    return o;
  }
};

// ---------------------------------------------------------------------------
// Train pass state

struct TrainPass::State {
  std::shared_ptr<const Detector::Impl> impl;
  ModelParameters params;  // snapshot; backward needs the weights
  Detector::Impl::Backbone bb;
  Detector::Impl::RpnOut rpn;
  // RPN assignment
  std::vector<int> rpn_selected;      // anchors contributing to the cls loss
  std::vector<double> rpn_labels;     // label per selected anchor
  std::vector<int> rpn_pos;           // positive anchors
  std::vector<std::array<double, 4>> rpn_targets;  // aligned with rpn_pos
  // ROI sampling
  std::vector<Box> rois;
  std::vector<int> roi_labels;        // 0 = background, 1..K
  std::vector<std::array<double, 4>> roi_targets;  // valid when label > 0
  Detector::Impl::RoiOut roi;
  std::vector<int> soft_rows;         // roi index for each student_soft row
  // Target-box features
  std::vector<nn::RoiPlan> target_plans;
  TrainStepOutput out;
};

const TrainStepOutput& TrainPass::output() const { return state_->out; }

// ---------------------------------------------------------------------------
// Detector

Detector::Detector(DetectorConfig cfg)
    : cfg_(std::move(cfg)), impl_(std::make_shared<const Impl>(cfg_)) {}

ModelParameters Detector::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  const Impl& m = *impl_;
  ModelParameters::Map t;
  auto normal = [&](std::vector<int> shape, double std) {
    Tensor x(std::move(shape));
    for (double& v : x.values) v = std * rng.normal();
    return x;
  };
  for (std::size_t i = 0; i < m.convs.size(); ++i) {
    const auto& s = m.convs[i];
    t[m.conv_name(i) + ".weight"] = normal({s.out_c, s.in_c, s.k, s.k}, std::sqrt(2.0 / s.patch()));
    t[m.conv_name(i) + ".bias"] = Tensor({s.out_c});
  }
  const int A = m.num_anchor_shapes, C = m.feat_c, K1 = cfg_.num_classes + 1;
  t["rpn.obj.weight"] = normal({A, C}, 0.01);
  // Prior of ~5% objectness keeps the early loss dominated by positives.
  t["rpn.obj.bias"] = Tensor({A}, -3.0);
  t["rpn.delta.weight"] = normal({4 * A, C}, 0.001);
  t["rpn.delta.bias"] = Tensor({4 * A});
  t["roi.fc.weight"] = normal({cfg_.roi_hidden, m.roi_dim()}, std::sqrt(2.0 / m.roi_dim()));
  t["roi.fc.bias"] = Tensor({cfg_.roi_hidden});
  t["roi.cls.weight"] = normal({K1, cfg_.roi_hidden}, 0.01);
  t["roi.cls.bias"] = Tensor({K1});
  t["roi.box.weight"] = normal({4, cfg_.roi_hidden}, 0.001);
  t["roi.box.bias"] = Tensor({4});
  return ModelParameters(std::move(t));
}

std::vector<Box> Detector::propose(const ModelParameters& params, const Image& image,
                                   bool training) const {
  impl_->check_image(image);
  const auto bb = impl_->backbone(params, image);
  return impl_->proposals(impl_->rpn(params, bb.features()), training);
}

InferenceResult Detector::infer(const ModelParameters& params, const Image& image) const {
  const Impl& m = *impl_;
  m.check_image(image);
  const auto bb = m.backbone(params, image);
  const auto& feat = bb.features();
  const auto props = m.proposals(m.rpn(params, feat), false);
  const auto roi = m.roi_head(params, feat, props);
  const Rows region = m.region_means(roi.pooled);
  const int K = cfg_.num_classes;

  DetectionSet raw;
  std::vector<std::size_t> source_row;
  for (std::size_t r = 0; r < props.size(); ++r) {
    const auto probs = nn::softmax(roi.logits.row(r).data(), K + 1);
    auto soft = nn::softmax(roi.logits.row(r).data() + 1, K);
    const int cat = static_cast<int>(std::max_element(soft.begin(), soft.end()) - soft.begin());
    const double score = probs[1 + cat];
    if (score < cfg_.score_floor) continue;
    const Box box = clip(decode(props[r], roi.deltas.row(r).data(), kRoiBoxWeights),
                         cfg_.input_width, cfg_.input_height);
    raw.detections.push_back({box, cat, score, std::move(soft)});
    source_row.push_back(r);
  }

  // Per-category NMS, keeping track of which proposal each survivor came from.
  InferenceResult result;
  result.features.image = m.image_feature(feat);
  std::vector<Detection> kept;
  for (std::size_t idx : score_order(raw.detections)) {
    const Detection& cand = raw.detections[idx];
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.category == cand.category && iou(k.box, cand.box) > cfg_.nms_iou) {
        suppressed = true;
        break;
      }
    if (suppressed) continue;
    kept.push_back(cand);
    result.features.regions.push_back(region[source_row[idx]]);
    if (static_cast<int>(kept.size()) >= cfg_.max_detections) break;
  }
  result.detections.detections = std::move(kept);
  return result;
}

FeatureEmbedding Detector::embed(const ModelParameters& params, const Image& image,
                                 const std::vector<Box>& boxes) const {
  const Impl& m = *impl_;
  m.check_image(image);
  const auto bb = m.backbone(params, image);
  FeatureEmbedding fe;
  fe.image = m.image_feature(bb.features());
  std::vector<nn::RoiPlan> plans;
  fe.regions = m.region_means(m.pool_regions(bb.features(), boxes, plans));
  return fe;
}

TrainPass Detector::train_step(const ModelParameters& params, const Image& image,
                               const std::vector<Target>& targets, const std::vector<Box>& ignore) const {
  return train_step_with_proposals(params, image, targets, {}, ignore);
}

TrainPass Detector::train_step_with_proposals(const ModelParameters& params, const Image& image,
                                              const std::vector<Target>& targets,
                                              const std::vector<Box>& fixed_proposals,
                                              const std::vector<Box>& ignore) const {
  const Impl& m = *impl_;
  m.check_image(image);
  for (const auto& t : targets) {
    if (!t.box.valid() || t.box.x_min < 0 || t.box.y_min < 0 || t.box.x_max > cfg_.input_width ||
        t.box.y_max > cfg_.input_height)
      throw ContractViolation("target box outside the image");
    if (t.category < 0 || t.category >= cfg_.num_classes)
      throw ContractViolation("target category out of range");
  }

  auto st = std::make_shared<TrainPass::State>();
  st->impl = impl_;
  st->params = params;
  st->bb = m.backbone(params, image);
  const auto& feat = st->bb.features();
  st->rpn = m.rpn(params, feat);
  TrainStepOutput& out = st->out;

  // RPN assignment.
  const int na = m.num_anchors();
  const int nt = static_cast<int>(targets.size());
  std::vector<double> best_iou(na, 0.0);
  std::vector<int> best_gt(na, -1);
  std::vector<int> gt_best_anchor(nt, -1);
  std::vector<double> gt_best_iou(nt, 0.0);
  for (int i = 0; i < na; ++i)
    for (int g = 0; g < nt; ++g) {
      const double v = iou(m.anchors[i], targets[g].box);
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = g;
      }
      if (v > gt_best_iou[g]) {
        gt_best_iou[g] = v;
        gt_best_anchor[g] = i;
      }
    }
  std::vector<int> label(na, 0);  // 1 pos, 0 neg, -1 ignore
  auto near_ignored = [&](const Box& b, double threshold) {
    for (const auto& g : ignore)
      if (iou(b, g) >= threshold) return true;
    return false;
  };
  for (int i = 0; i < na; ++i) {
    if (best_iou[i] >= cfg_.rpn_pos_iou)
      label[i] = 1;
    else if (best_iou[i] >= cfg_.rpn_neg_iou || near_ignored(m.anchors[i], cfg_.rpn_pos_iou))
      label[i] = -1;
  }
  for (int g = 0; g < nt; ++g)
    if (gt_best_anchor[g] >= 0) {
      label[gt_best_anchor[g]] = 1;
      best_gt[gt_best_anchor[g]] = g;
    }
  std::vector<int> negatives;
  for (int i = 0; i < na; ++i) {
    if (label[i] == 1) {
      st->rpn_pos.push_back(i);
      st->rpn_targets.push_back(encode(m.anchors[i], targets[best_gt[i]].box, kUnitWeights));
    } else if (label[i] == 0) {
      negatives.push_back(i);
    }
  }
  // Hardest negatives first; ties resolved by anchor index.
  const auto n_neg = std::min<std::size_t>(
      negatives.size(),
      std::max<std::size_t>(cfg_.rpn_min_neg, cfg_.rpn_neg_per_pos * st->rpn_pos.size()));
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](int a, int b) { return st->rpn.obj[a] > st->rpn.obj[b]; });
  negatives.resize(n_neg);
  for (int i : st->rpn_pos) {
    st->rpn_selected.push_back(i);
    st->rpn_labels.push_back(1.0);
  }
  for (int i : negatives) {
    st->rpn_selected.push_back(i);
    st->rpn_labels.push_back(0.0);
  }
  {
    double cls = 0.0;
    for (std::size_t s = 0; s < st->rpn_selected.size(); ++s)
      cls += nn::bce_logits(st->rpn.obj[st->rpn_selected[s]], st->rpn_labels[s]);
    out.loss_rpn_cls = st->rpn_selected.empty() ? 0.0 : cls / st->rpn_selected.size();
    double reg = 0.0;
    for (std::size_t p = 0; p < st->rpn_pos.size(); ++p) {
      double d[4];
      m.anchor_delta(st->rpn, st->rpn_pos[p], d);
      for (int j = 0; j < 4; ++j) reg += nn::smooth_l1(d[j] - st->rpn_targets[p][j], kRpnBeta);
    }
    out.loss_rpn_reg = reg / std::max<std::size_t>(1, st->rpn_pos.size());
  }

  // Region sampling: targets first, then proposals in score order.
  std::vector<Box> candidates;
  for (const auto& t : targets) candidates.push_back(t.box);
  const std::vector<Box> props =
      fixed_proposals.empty() ? m.proposals(st->rpn, true) : fixed_proposals;
  candidates.insert(candidates.end(), props.begin(), props.end());
  const int fg_quota = std::max(1, static_cast<int>(std::lround(cfg_.roi_batch * cfg_.roi_fg_fraction)));
  std::vector<int> fg, bg;
  std::vector<int> cand_gt(candidates.size(), -1);
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    double best = 0.0;
    for (int g = 0; g < nt; ++g) {
      const double v = iou(candidates[c], targets[g].box);
      if (v > best) {
        best = v;
        cand_gt[c] = g;
      }
    }
    if (cand_gt[c] >= 0 && best >= cfg_.roi_fg_iou) {
      if (static_cast<int>(fg.size()) < fg_quota) fg.push_back(static_cast<int>(c));
    } else if (!near_ignored(candidates[c], cfg_.roi_fg_iou)) {
      bg.push_back(static_cast<int>(c));
    }
  }
  const int bg_quota = cfg_.roi_batch - static_cast<int>(fg.size());
  if (static_cast<int>(bg.size()) > bg_quota) bg.resize(bg_quota);
  for (int c : fg) {
    const int g = cand_gt[c];
    st->rois.push_back(candidates[c]);
    st->roi_labels.push_back(targets[g].category + 1);
    st->roi_targets.push_back(encode(candidates[c], targets[g].box, kRoiBoxWeights));
    out.soft_target.push_back(g);
  }
  for (int c : bg) {
    st->rois.push_back(candidates[c]);
    st->roi_labels.push_back(0);
    st->roi_targets.push_back({0, 0, 0, 0});
  }

  const int K = cfg_.num_classes;
  st->roi = m.roi_head(params, feat, st->rois);
  const std::size_t R = st->rois.size();
  {
    double cls = 0.0, reg = 0.0;
    for (std::size_t r = 0; r < R; ++r) {
      const auto p = nn::softmax(st->roi.logits.row(r).data(), K + 1);
      cls -= std::log(std::max(p[st->roi_labels[r]], 1e-300));
      if (st->roi_labels[r] > 0)
        for (int j = 0; j < 4; ++j)
          reg += nn::smooth_l1(st->roi.deltas(r, j) - st->roi_targets[r][j], kRoiBeta);
    }
    out.loss_roi_cls = R ? cls / R : 0.0;
    out.loss_roi_reg = R ? reg / R : 0.0;
  }
  for (std::size_t r = 0; r < fg.size(); ++r) {
    out.student_soft.push_back(nn::softmax(st->roi.logits.row(r).data() + 1, K));
    st->soft_rows.push_back(static_cast<int>(r));
  }

  std::vector<Box> target_boxes;
  for (const auto& t : targets) target_boxes.push_back(t.box);
  out.features.image = m.image_feature(feat);
  out.features.regions = m.region_means(m.pool_regions(feat, target_boxes, st->target_plans));
  return TrainPass(std::move(st));
}

ModelParameters TrainPass::backward(const Upstream& up) const {
  const State& st = *state_;
  const Detector::Impl& m = *st.impl;
  const DetectorConfig& cfg = m.cfg;
  const ModelParameters& p = st.params;
  ModelParameters grads = p.zeros_like();
  const int n = m.hw(), C = m.feat_c, A = m.num_anchor_shapes;
  const int K = cfg.num_classes, K1 = K + 1, Hd = cfg.roi_hidden;
  const int bins = cfg.roi_pool * cfg.roi_pool;
  std::vector<double> d_feat(static_cast<std::size_t>(C) * n, 0.0);
  MapConstMat feat(st.bb.features().data(), C, n);

  // RPN head.
  {
    RowMat d_obj = RowMat::Zero(A, n);
    RowMat d_delta = RowMat::Zero(4 * A, n);
    if (!st.rpn_selected.empty()) {
      const double scale = up.rpn_cls / st.rpn_selected.size();
      for (std::size_t s = 0; s < st.rpn_selected.size(); ++s) {
        const int i = st.rpn_selected[s];
        d_obj(i / n, i % n) += scale * (nn::sigmoid(st.rpn.obj[i]) - st.rpn_labels[s]);
      }
    }
    if (!st.rpn_pos.empty()) {
      const double scale = up.rpn_reg / st.rpn_pos.size();
      for (std::size_t q = 0; q < st.rpn_pos.size(); ++q) {
        const int i = st.rpn_pos[q];
        double d[4];
        m.anchor_delta(st.rpn, i, d);
        for (int j = 0; j < 4; ++j)
          d_delta((i / n) * 4 + j, i % n) +=
              scale * nn::smooth_l1_grad(d[j] - st.rpn_targets[q][j], kRpnBeta);
      }
    }
    MapMat(grads.at("rpn.obj.weight").values.data(), A, C).noalias() += d_obj * feat.transpose();
    MapMat(grads.at("rpn.delta.weight").values.data(), 4 * A, C).noalias() += d_delta * feat.transpose();
    auto& gob = grads.at("rpn.obj.bias").values;
    for (int a = 0; a < A; ++a) gob[a] += d_obj.row(a).sum();
    auto& gdb = grads.at("rpn.delta.bias").values;
    for (int a = 0; a < 4 * A; ++a) gdb[a] += d_delta.row(a).sum();
    MapMat df(d_feat.data(), C, n);
    df.noalias() += MapConstMat(p.at("rpn.obj.weight").values.data(), A, C).transpose() * d_obj;
    df.noalias() += MapConstMat(p.at("rpn.delta.weight").values.data(), 4 * A, C).transpose() * d_delta;
  }

  // Region head.
  const std::size_t R = st.rois.size();
  if (R > 0) {
    RowMat d_logits = RowMat::Zero(R, K1);
    RowMat d_deltas = RowMat::Zero(R, 4);
    for (std::size_t r = 0; r < R; ++r) {
      const auto prob = nn::softmax(st.roi.logits.row(r).data(), K1);
      for (int j = 0; j < K1; ++j)
        d_logits(r, j) += up.roi_cls * (prob[j] - (j == st.roi_labels[r] ? 1.0 : 0.0)) / R;
      if (st.roi_labels[r] > 0)
        for (int j = 0; j < 4; ++j)
          d_deltas(r, j) += up.roi_reg *
                            nn::smooth_l1_grad(st.roi.deltas(r, j) - st.roi_targets[r][j], kRoiBeta) / R;
    }
    if (!up.d_student_soft.empty()) {
      if (up.d_student_soft.size() != st.soft_rows.size())
        throw ContractViolation("student soft gradient rows do not match outputs");
      for (std::size_t s = 0; s < st.soft_rows.size(); ++s) {
        const auto& q = st.out.student_soft[s];
        const auto& g = up.d_student_soft[s];
        double dot = 0.0;
        for (int k = 0; k < K; ++k) dot += q[k] * g[k];
        for (int k = 0; k < K; ++k) d_logits(st.soft_rows[s], 1 + k) += q[k] * (g[k] - dot);
      }
    }
    MapMat(grads.at("roi.cls.weight").values.data(), K1, Hd).noalias() += d_logits.transpose() * st.roi.hidden;
    MapMat(grads.at("roi.box.weight").values.data(), 4, Hd).noalias() += d_deltas.transpose() * st.roi.hidden;
    auto& gcb = grads.at("roi.cls.bias").values;
    for (int j = 0; j < K1; ++j) gcb[j] += d_logits.col(j).sum();
    auto& gbb = grads.at("roi.box.bias").values;
    for (int j = 0; j < 4; ++j) gbb[j] += d_deltas.col(j).sum();
    RowMat d_hidden = d_logits * MapConstMat(p.at("roi.cls.weight").values.data(), K1, Hd) +
                      d_deltas * MapConstMat(p.at("roi.box.weight").values.data(), 4, Hd);
    for (Eigen::Index r = 0; r < d_hidden.rows(); ++r)
      for (int j = 0; j < Hd; ++j)
        if (st.roi.hidden(r, j) <= 0.0) d_hidden(r, j) = 0.0;
    MapMat(grads.at("roi.fc.weight").values.data(), Hd, m.roi_dim()).noalias() +=
        d_hidden.transpose() * st.roi.pooled;
    auto& gfb = grads.at("roi.fc.bias").values;
    for (int j = 0; j < Hd; ++j) gfb[j] += d_hidden.col(j).sum();
    RowMat d_pooled = d_hidden * MapConstMat(p.at("roi.fc.weight").values.data(), Hd, m.roi_dim());
    for (std::size_t r = 0; r < R; ++r)
      nn::roi_align_backward(d_pooled.row(r).data(), C, n, st.roi.plans[r], d_feat.data());
  }

  // Target-box region features.
  if (!up.d_regions.empty()) {
    if (up.d_regions.size() != st.target_plans.size())
      throw ContractViolation("region feature gradient rows do not match outputs");
    std::vector<double> d_pooled(static_cast<std::size_t>(m.roi_dim()));
    for (std::size_t t = 0; t < st.target_plans.size(); ++t) {
      for (int c = 0; c < C; ++c)
        for (int b = 0; b < bins; ++b) d_pooled[c * bins + b] = up.d_regions[t][c] / bins;
      nn::roi_align_backward(d_pooled.data(), C, n, st.target_plans[t], d_feat.data());
    }
  }

  if (!up.d_image.empty()) {
    if (static_cast<int>(up.d_image.size()) != C)
      throw ContractViolation("image feature gradient has wrong dimension");
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < n; ++i) d_feat[static_cast<std::size_t>(c) * n + i] += up.d_image[c] / n;
  }

  // Backbone.
  std::vector<double> d_out = std::move(d_feat);
  for (std::size_t li = m.convs.size(); li-- > 0;) {
    const auto& s = m.convs[li];
    const std::string name = m.conv_name(li);
    std::vector<double> d_in;
    if (li > 0) d_in.assign(static_cast<std::size_t>(s.in_c) * s.in_h * s.in_w, 0.0);
    nn::conv_relu_backward(s, st.bb.cols[li], st.bb.acts[li], d_out,
                           p.at(name + ".weight").values.data(),
                           grads.at(name + ".weight").values.data(),
                           grads.at(name + ".bias").values.data(), li > 0 ? d_in.data() : nullptr);
    d_out = std::move(d_in);
  }
  return grads;
}

Checkpoint Detector::make_checkpoint(const ModelParameters& params, const Taxonomy& taxonomy) const {
  Checkpoint c;
  c.params = params;
  c.taxonomy = taxonomy;
  c.detector_config = cfg_.to_json();
  return c;
}

// ---------------------------------------------------------------------------
// SGD

void Sgd::step(ModelParameters& params, const ModelParameters& grads, double lr_scale) {
  params.require_same_schema(grads, "sgd step");
  if (velocity_.empty()) velocity_ = params.zeros_like();
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = std::sqrt(squared_norm(grads));
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  const double lr = cfg_.learning_rate * lr_scale;
  auto v = velocity_.tensors().begin();
  auto g = grads.tensors().begin();
  for (auto& [name, t] : params.tensors()) {
    auto& vv = v->second.values;
    const auto& gv = g->second.values;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      const double grad = scale * gv[i] + cfg_.weight_decay * t.values[i];
      vv[i] = cfg_.momentum * vv[i] + grad;
      t.values[i] -= lr * vv[i];
    }
    ++v;
    ++g;
  }
}

}  // namespace dla
