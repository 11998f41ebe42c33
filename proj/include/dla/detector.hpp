#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dla/geometry.hpp"
#include "dla/image.hpp"
#include "dla/params.hpp"

namespace dla {

using Rows = std::vector<std::vector<double>>;

/// Intermediate detector features: the per-image pooled vector and one
/// region vector per detection/box, all of dimension `dim`.
struct FeatureEmbedding {
  std::vector<double> image;
  Rows regions;

  std::size_t dim() const { return image.size(); }
  friend bool operator==(const FeatureEmbedding&, const FeatureEmbedding&) = default;
};

struct InferenceResult {
  DetectionSet detections;  // post-NMS, descending score
  FeatureEmbedding features;

  friend bool operator==(const InferenceResult&, const InferenceResult&) = default;
};

struct Target {
  Box box;
  int category = 0;
};

struct TrainStepOutput {
  double loss_rpn_cls = 0.0;
  double loss_rpn_reg = 0.0;
  double loss_roi_cls = 0.0;
  double loss_roi_reg = 0.0;
  /// Foreground-category distributions of the sampled proposals that matched
  /// a target at IoU >= roi_fg_iou; `soft_target` holds the matched target.
  Rows student_soft;
  std::vector<int> soft_target;
  /// `regions` is row-aligned with the targets passed to train_step.
  FeatureEmbedding features;

  double detection_loss() const { return loss_rpn_cls + loss_rpn_reg + loss_roi_cls + loss_roi_reg; }
};

/// Gradient of the caller's objective with respect to each train-step output.
struct Upstream {
  double rpn_cls = 1.0;
  double rpn_reg = 1.0;
  double roi_cls = 1.0;
  double roi_reg = 1.0;
  Rows d_student_soft;               // empty or aligned with student_soft
  Rows d_regions;                    // empty or aligned with features.regions
  std::vector<double> d_image;       // empty or dim()
};

struct AnchorShape {
  double width = 0.0;
  double height = 0.0;
};

struct DetectorConfig {
  int input_height = 320;
  int input_width = 320;
  int input_channels = 3;
  int num_classes = 4;
  int input_pool = 2;  // fixed average-pool resize in front of the backbone
  double pixel_mean = 0.5;
  double pixel_scale = 2.0;
  // First three stages downsample by 2; later stages keep resolution and
  // double their dilation.
  std::vector<int> channels{16, 32, 64, 64, 64};
  std::vector<AnchorShape> anchors{{64, 16},  {128, 16}, {136, 40}, {136, 80}, {200, 64},
                                   {256, 24}, {272, 48}, {272, 96}, {96, 96}};
  int roi_pool = 4;
  int roi_hidden = 256;

  double rpn_pos_iou = 0.5;
  double rpn_neg_iou = 0.3;
  int rpn_neg_per_pos = 3;
  int rpn_min_neg = 32;
  int train_pre_nms = 600;
  int train_post_nms = 128;
  int infer_pre_nms = 300;
  int infer_post_nms = 64;
  double proposal_nms_iou = 0.7;
  double roi_fg_iou = 0.5;
  int roi_batch = 64;
  double roi_fg_fraction = 0.25;

  double score_floor = 0.05;
  int max_detections = 100;
  double nms_iou = 0.5;

  int feature_stride() const;
  int feature_dim() const { return channels.back(); }
  void validate() const;
  std::string to_json() const;
  static DetectorConfig from_json(const std::string& text);
  /// 2-category detector on an 8x8 input, used for gradient checks.
  static DetectorConfig micro();
};

class TrainPass;

/// Reference two-stage detector: convolutional backbone, dense anchor head
/// (objectness + box regression, the RPN losses) and a pooled-region head
/// (category softmax + box refinement, the ROI losses). Stateless with
/// respect to parameters; every call takes them explicitly.
class Detector {
 public:
  explicit Detector(DetectorConfig cfg);

  const DetectorConfig& config() const { return cfg_; }
  ModelParameters init_params(std::uint64_t seed) const;

  InferenceResult infer(const ModelParameters& params, const Image& image) const;
  /// Features of arbitrary boxes, pooled exactly as for detections.
  FeatureEmbedding embed(const ModelParameters& params, const Image& image,
                         const std::vector<Box>& boxes) const;

  /// Forward pass with the four detection losses. Call backward() on the
  /// result to obtain parameter gradients. Anchors and proposals that would
  /// be foreground for an `ignore` box, and are not foreground for a target,
  /// are left out of negative sampling.
  TrainPass train_step(const ModelParameters& params, const Image& image,
                       const std::vector<Target>& targets, const std::vector<Box>& ignore = {}) const;
  /// Same, with the proposal set fixed by the caller (gradient checks).
  TrainPass train_step_with_proposals(const ModelParameters& params, const Image& image,
                                      const std::vector<Target>& targets,
                                      const std::vector<Box>& proposals,
                                      const std::vector<Box>& ignore = {}) const;

  /// Proposals the region head would see at inference time.
  std::vector<Box> propose(const ModelParameters& params, const Image& image, bool training) const;

  Checkpoint make_checkpoint(const ModelParameters& params, const Taxonomy& taxonomy) const;

  struct Impl;

 private:
  DetectorConfig cfg_;
  std::shared_ptr<const Impl> impl_;
};

class TrainPass {
 public:
  const TrainStepOutput& output() const;
  ModelParameters backward(const Upstream& up) const;

  struct State;
  explicit TrainPass(std::shared_ptr<State> s) : state_(std::move(s)) {}

 private:
  std::shared_ptr<State> state_;
};

/// SGD with momentum, L2 weight decay and optional global-norm clipping.
struct SgdConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double clip_norm = 10.0;  // <= 0 disables
};

class Sgd {
 public:
  explicit Sgd(SgdConfig cfg) : cfg_(cfg) {}
  void step(ModelParameters& params, const ModelParameters& grads, double lr_scale = 1.0);
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  ModelParameters velocity_;
};

}  // namespace dla
