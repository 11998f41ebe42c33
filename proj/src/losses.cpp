#include "dla/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dla/errors.hpp"

namespace dla {

namespace {
constexpr double kFloor = 1e-12;
}

const std::array<const char*, 6> kLossTermNames{"rpn", "roi", "kl_distill", "feature_distill",
                                                "entropy", "contrastive"};

void LossWeights::validate() const {
  for (std::size_t i = 0; i < w.size(); ++i)
    if (!(std::isfinite(w[i]) && w[i] >= 0.0))
      throw ConfigError(std::string("loss weight for ") + kLossTermNames[i] + " must be finite and >= 0");
  if (!(std::isfinite(gamma_e) && gamma_e >= 0.0)) throw ConfigError("gamma_e must be finite and >= 0");
  if (!(std::isfinite(gamma_p) && gamma_p >= 0.0)) throw ConfigError("gamma_p must be finite and >= 0");
  if (!(std::isfinite(factor_cap) && factor_cap >= 1.0)) throw ConfigError("factor_cap must be >= 1");
}

void require_probability_rows(const Rows& rows, const char* what, double tol) {
  if (rows.empty()) return;
  const std::size_t k = rows.front().size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != k || k == 0)
      throw ContractViolation(std::string(what) + ": rows have inconsistent length");
    double s = 0.0;
    for (double p : rows[r]) {
      if (!(p >= 0.0)) throw ContractViolation(std::string(what) + ": negative or NaN probability in row " +
                                               std::to_string(r));
      s += p;
    }
    if (std::abs(s - 1.0) > tol)
      throw ContractViolation(std::string(what) + ": row " + std::to_string(r) + " sums to " +
                              std::to_string(s));
  }
}

LossGrad soft_kl_distill(const Rows& student_soft, const Rows& pseudo_soft, KlDirection direction) {
  if (student_soft.size() != pseudo_soft.size())
    throw ContractViolation("soft_kl_distill: row counts differ");
  require_probability_rows(student_soft, "soft_kl_distill student");
  require_probability_rows(pseudo_soft, "soft_kl_distill pseudo");
  LossGrad out;
  const std::size_t n = student_soft.size();
  if (n == 0) return out;
  out.d_rows.resize(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& q = student_soft[r];
    const auto& p = pseudo_soft[r];
    if (q.size() != p.size()) throw ContractViolation("soft_kl_distill: category counts differ");
    auto& g = out.d_rows[r];
    g.assign(q.size(), 0.0);
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double qk = std::max(q[k], kFloor);
      const double pk = std::max(p[k], kFloor);
      if (direction == KlDirection::PseudoToStudent) {
        if (p[k] > 0.0) out.value += p[k] * (std::log(p[k]) - std::log(qk));
        g[k] = -p[k] / qk * inv_n;
      } else {
        if (q[k] > 0.0) out.value += q[k] * (std::log(q[k]) - std::log(pk));
        g[k] = (std::log(qk) - std::log(pk) + 1.0) * inv_n;
      }
    }
  }
  out.value *= inv_n;
  return out;
}

LossGrad feature_distill(const FeatureEmbedding& teacher_weak, const FeatureEmbedding& student_strong) {
  const auto& t = teacher_weak.image;
  const auto& s = student_strong.image;
  if (t.size() != s.size()) throw ContractViolation("feature_distill: embedding dimensions differ");
  LossGrad out;
  if (t.empty()) return out;
  const double inv_d = 1.0 / static_cast<double>(t.size());
  out.d_vec.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double diff = s[i] - t[i];
    out.value += diff * diff;
    out.d_vec[i] = 2.0 * diff * inv_d;
  }
  out.value *= inv_d;
  return out;
}

LossGrad entropy_loss(const Rows& student_soft) {
  require_probability_rows(student_soft, "entropy_loss");
  LossGrad out;
  const std::size_t n = student_soft.size();
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  out.d_rows.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& p = student_soft[r];
    out.d_rows[r].resize(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (p[k] > 0.0) out.value -= p[k] * std::log(p[k]);
      out.d_rows[r][k] = -(std::log(std::max(p[k], kFloor)) + 1.0) * inv_n;
    }
  }
  out.value *= inv_n;
  return out;
}

namespace {

std::vector<double> unit(const std::vector<double>& v, double& norm, const char* what, std::size_t row) {
  norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
  if (!(norm > 0.0))
    throw ContractViolation(std::string("contrastive_loss: zero-norm ") + what + " row " + std::to_string(row));
  std::vector<double> u(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) u[i] = v[i] / norm;
  return u;
}

}  // namespace

LossGrad contrastive_loss(const Rows& teacher_regions, const Rows& student_regions, double temperature) {
  if (teacher_regions.size() != student_regions.size())
    throw ContractViolation("contrastive_loss: row counts differ");
  if (!(temperature > 0.0)) throw ContractViolation("contrastive_loss: temperature must be > 0");
  const std::size_t m = student_regions.size();
  LossGrad out;
  out.d_rows.assign(m, {});
  Rows t(m), s(m);
  std::vector<double> s_norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    if (teacher_regions[i].size() != student_regions[i].size() ||
        student_regions[i].size() != student_regions[0].size())
      throw ContractViolation("contrastive_loss: embedding dimensions differ");
    double tn;
    t[i] = unit(teacher_regions[i], tn, "teacher", i);
    s[i] = unit(student_regions[i], s_norm[i], "student", i);
  }
  for (auto& g : out.d_rows) g.assign(m ? student_regions[0].size() : 0, 0.0);
  if (m < 2) return out;

  std::vector<double> logits(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      logits[i * m + j] = std::inner_product(s[i].begin(), s[i].end(), t[j].begin(), 0.0) / temperature;

  // dL/dlogits accumulated from both directions.
  std::vector<double> dl(m * m, 0.0);
  const double scale = 0.5 / static_cast<double>(m);
  for (int dir = 0; dir < 2; ++dir) {
    for (std::size_t a = 0; a < m; ++a) {
      auto at = [&](std::size_t b) -> double& { return dir == 0 ? logits[a * m + b] : logits[b * m + a]; };
      double mx = -INFINITY;
      for (std::size_t b = 0; b < m; ++b) mx = std::max(mx, at(b));
      double z = 0.0;
      for (std::size_t b = 0; b < m; ++b) z += std::exp(at(b) - mx);
      const double lse = mx + std::log(z);
      out.value += scale * (lse - at(a));
      for (std::size_t b = 0; b < m; ++b) {
        const double prob = std::exp(at(b) - lse) - (a == b ? 1.0 : 0.0);
        dl[dir == 0 ? a * m + b : b * m + a] += scale * prob;
      }
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t d = s[i].size();
    std::vector<double> du(d, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
      const double c = dl[i * m + j] / temperature;
      for (std::size_t k = 0; k < d; ++k) du[k] += c * t[j][k];
    }
    const double proj = std::inner_product(du.begin(), du.end(), s[i].begin(), 0.0);
    for (std::size_t k = 0; k < d; ++k) out.d_rows[i][k] = (du[k] - proj * s[i][k]) / s_norm[i];
  }
  return out;
}

double weight_factor(const Rows& dyn_soft, std::size_t pseudo_count, const LossWeights& weights) {
  return weight_factor(entropy_loss(dyn_soft).value, pseudo_count, weights);
}

double weight_factor(double h, std::size_t pseudo_count, const LossWeights& weights) {
  const double f = (1.0 + weights.gamma_e * h) * (1.0 + weights.gamma_p * static_cast<double>(pseudo_count));
  return std::clamp(f, 1.0, weights.factor_cap);
}

LossBreakdown total(const LossParts& parts, double factor, const LossWeights& weights) {
  const auto v = parts.as_array();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string("non-finite loss term '") + kLossTermNames[i] + "'");
  if (!std::isfinite(factor)) throw NumericError("non-finite loss weighting factor");
  LossBreakdown out;
  static_cast<LossParts&>(out) = parts;
  out.factor = factor;
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) sum += weights.w[i] * v[i];
  out.total = factor * sum;
  return out;
}

std::array<double, 6> loss_coefficients(double factor, const LossWeights& weights) {
  std::array<double, 6> c{};
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = factor * weights.w[i];
  return c;
}

}  // namespace dla
