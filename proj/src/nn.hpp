#pragma once

// Dense kernels behind the reference detector. Everything is planar
// (channel, row, column) double precision.

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "dla/geometry.hpp"

namespace dla::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

struct ConvShape {
  int in_c = 0, out_c = 0, k = 3, stride = 1, pad = 1, dilation = 1;
  int in_h = 0, in_w = 0;
  int out_h() const { return (in_h + 2 * pad - dilation * (k - 1) - 1) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - dilation * (k - 1) - 1) / stride + 1; }
  int patch() const { return in_c * k * k; }
};

void im2col(const double* in, const ConvShape& s, double* col);
void col2im_add(const double* col, const ConvShape& s, double* in_grad);

/// out = relu(W * im2col(in) + b); returns the im2col buffer for backward.
void conv_relu_forward(const double* in, const ConvShape& s, const double* weight,
                       const double* bias, std::vector<double>& col, std::vector<double>& out);

/// `d_out` is the gradient w.r.t. the post-ReLU output and is masked in place.
/// `d_in` may be null for the first layer.
void conv_relu_backward(const ConvShape& s, const std::vector<double>& col,
                        const std::vector<double>& out, std::vector<double>& d_out,
                        const double* weight, double* d_weight, double* d_bias, double* d_in);

/// Bilinear sampling plan for one region: for each of the pool*pool bins a
/// list of (spatial index, weight) pairs whose weights already include the
/// 1/(samples per bin) average.
struct RoiPlan {
  std::vector<std::vector<std::pair<int, double>>> bins;
};

RoiPlan roi_align_plan(const Box& box, int feat_h, int feat_w, double stride, int pool,
                       int sampling = 2);

/// Pools `feat` (C x H x W) into C*pool*pool values laid out channel-major.
void roi_align_forward(const double* feat, int channels, int hw, const RoiPlan& plan, double* out);
void roi_align_backward(const double* d_out, int channels, int hw, const RoiPlan& plan,
                        double* d_feat);

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// Binary cross-entropy with logits.
inline double bce_logits(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline double smooth_l1(double d, double beta) {
  const double a = std::abs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

inline double smooth_l1_grad(double d, double beta) {
  if (std::abs(d) < beta) return d / beta;
  return d > 0 ? 1.0 : -1.0;
}

/// Softmax of v[begin, end).
std::vector<double> softmax(const double* v, int n);

}  // namespace dla::nn
