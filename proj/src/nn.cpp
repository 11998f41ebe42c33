#include "nn.hpp"

#include <algorithm>

namespace dla::nn {

void im2col(const double* in, const ConvShape& s, double* col) {
  const int oh = s.out_h(), ow = s.out_w();
  const int ohw = oh * ow;
  for (int c = 0; c < s.in_c; ++c) {
    const double* plane = in + static_cast<std::size_t>(c) * s.in_h * s.in_w;
    for (int ky = 0; ky < s.k; ++ky) {
      for (int kx = 0; kx < s.k; ++kx) {
        double* row = col + static_cast<std::size_t>((c * s.k + ky) * s.k + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          double* dst = row + oy * ow;
          if (iy < 0 || iy >= s.in_h) {
            std::fill(dst, dst + ow, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * s.in_w;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            dst[ox] = (ix >= 0 && ix < s.in_w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvShape& s, double* in_grad) {
  const int oh = s.out_h(), ow = s.out_w();
  const int ohw = oh * ow;
  for (int c = 0; c < s.in_c; ++c) {
    double* plane = in_grad + static_cast<std::size_t>(c) * s.in_h * s.in_w;
    for (int ky = 0; ky < s.k; ++ky) {
      for (int kx = 0; kx < s.k; ++kx) {
        const double* row = col + static_cast<std::size_t>((c * s.k + ky) * s.k + kx) * ohw;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * s.stride - s.pad + ky * s.dilation;
          if (iy < 0 || iy >= s.in_h) continue;
          double* dst = plane + static_cast<std::size_t>(iy) * s.in_w;
          const double* src = row + oy * ow;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * s.stride - s.pad + kx * s.dilation;
            if (ix >= 0 && ix < s.in_w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void conv_relu_forward(const double* in, const ConvShape& s, const double* weight,
                       const double* bias, std::vector<double>& col, std::vector<double>& out) {
  const int ohw = s.out_h() * s.out_w();
  col.resize(static_cast<std::size_t>(s.patch()) * ohw);
  out.resize(static_cast<std::size_t>(s.out_c) * ohw);
  im2col(in, s, col.data());
  MapConstMat w(weight, s.out_c, s.patch());
  MapConstMat c(col.data(), s.patch(), ohw);
  MapMat y(out.data(), s.out_c, ohw);
  y.noalias() = w * c;
  for (int o = 0; o < s.out_c; ++o) {
    double* row = out.data() + static_cast<std::size_t>(o) * ohw;
    for (int i = 0; i < ohw; ++i) row[i] = std::max(row[i] + bias[o], 0.0);
  }
}

void conv_relu_backward(const ConvShape& s, const std::vector<double>& col,
                        const std::vector<double>& out, std::vector<double>& d_out,
                        const double* weight, double* d_weight, double* d_bias, double* d_in) {
  const int ohw = s.out_h() * s.out_w();
  for (std::size_t i = 0; i < d_out.size(); ++i)
    if (out[i] <= 0.0) d_out[i] = 0.0;
  MapConstMat dy(d_out.data(), s.out_c, ohw);
  MapConstMat c(col.data(), s.patch(), ohw);
  MapMat dw(d_weight, s.out_c, s.patch());
  dw.noalias() += dy * c.transpose();
  for (int o = 0; o < s.out_c; ++o) d_bias[o] += dy.row(o).sum();
  if (d_in) {
    RowMat dcol(s.patch(), ohw);
    MapConstMat w(weight, s.out_c, s.patch());
    dcol.noalias() = w.transpose() * dy;
    col2im_add(dcol.data(), s, d_in);
  }
}

RoiPlan roi_align_plan(const Box& box, int feat_h, int feat_w, double stride, int pool,
                       int sampling) {
  RoiPlan plan;
  plan.bins.resize(static_cast<std::size_t>(pool) * pool);
  const double x0 = box.x_min / stride - 0.5;
  const double y0 = box.y_min / stride - 0.5;
  const double bw = (box.x_max - box.x_min) / stride / pool;
  const double bh = (box.y_max - box.y_min) / stride / pool;
  const double norm = 1.0 / (sampling * sampling);
  for (int py = 0; py < pool; ++py) {
    for (int px = 0; px < pool; ++px) {
      auto& bin = plan.bins[static_cast<std::size_t>(py) * pool + px];
      for (int iy = 0; iy < sampling; ++iy) {
        double y = y0 + py * bh + (iy + 0.5) * bh / sampling;
        if (y < -1.0 || y > feat_h) continue;
        y = std::max(y, 0.0);
        int yl = static_cast<int>(y), yh;
        if (yl >= feat_h - 1) {
          yl = yh = feat_h - 1;
          y = yl;
        } else {
          yh = yl + 1;
        }
        const double ly = y - yl, hy = 1.0 - ly;
        for (int ix = 0; ix < sampling; ++ix) {
          double x = x0 + px * bw + (ix + 0.5) * bw / sampling;
          if (x < -1.0 || x > feat_w) continue;
          x = std::max(x, 0.0);
          int xl = static_cast<int>(x), xh;
          if (xl >= feat_w - 1) {
            xl = xh = feat_w - 1;
            x = xl;
          } else {
            xh = xl + 1;
          }
          const double lx = x - xl, hx = 1.0 - lx;
          bin.emplace_back(yl * feat_w + xl, hy * hx * norm);
          bin.emplace_back(yl * feat_w + xh, hy * lx * norm);
          bin.emplace_back(yh * feat_w + xl, ly * hx * norm);
          bin.emplace_back(yh * feat_w + xh, ly * lx * norm);
        }
      }
    }
  }
  return plan;
}

void roi_align_forward(const double* feat, int channels, int hw, const RoiPlan& plan, double* out) {
  const std::size_t nb = plan.bins.size();
  for (int c = 0; c < channels; ++c) {
    const double* plane = feat + static_cast<std::size_t>(c) * hw;
    for (std::size_t b = 0; b < nb; ++b) {
      double acc = 0.0;
      for (const auto& [idx, w] : plan.bins[b]) acc += w * plane[idx];
      out[c * nb + b] = acc;
    }
  }
}

void roi_align_backward(const double* d_out, int channels, int hw, const RoiPlan& plan,
                        double* d_feat) {
  const std::size_t nb = plan.bins.size();
  for (int c = 0; c < channels; ++c) {
    double* plane = d_feat + static_cast<std::size_t>(c) * hw;
    for (std::size_t b = 0; b < nb; ++b) {
      const double g = d_out[c * nb + b];
      if (g == 0.0) continue;
      for (const auto& [idx, w] : plan.bins[b]) plane[idx] += w * g;
    }
  }
}

std::vector<double> softmax(const double* v, int n) {
  std::vector<double> p(static_cast<std::size_t>(n));
  const double m = *std::max_element(v, v + n);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    p[i] = std::exp(v[i] - m);
    s += p[i];
  }
  for (double& x : p) x /= s;
  return p;
}

}  // namespace dla::nn
