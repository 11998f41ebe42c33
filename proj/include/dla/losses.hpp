#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "dla/detector.hpp"

namespace dla {

struct LossWeights {
  // rpn, roi, kl_distill, feature_distill, entropy, contrastive
  std::array<double, 6> w{1.0, 1.0, 0.5, 0.5, 0.1, 0.1};
  double gamma_e = 0.1;
  double gamma_p = 0.01;
  double factor_cap = 4.0;

  void validate() const;
};

enum class KlDirection { PseudoToStudent, StudentToPseudo };

/// Value of a loss term together with its gradient with respect to the
/// student-side argument (`d_rows` for row inputs, `d_vec` for vectors).
struct LossGrad {
  double value = 0.0;
  Rows d_rows;
  std::vector<double> d_vec;
};

/// Mean over rows of KL(pseudo || student) (or the reverse direction).
LossGrad soft_kl_distill(const Rows& student_soft, const Rows& pseudo_soft,
                         KlDirection direction = KlDirection::PseudoToStudent);

/// Mean squared difference of the per-image pooled vectors.
LossGrad feature_distill(const FeatureEmbedding& teacher_weak, const FeatureEmbedding& student_strong);

/// Mean Shannon entropy of the rows.
LossGrad entropy_loss(const Rows& student_soft);

/// Symmetric InfoNCE over cosine similarities: the average of the row-wise
/// and column-wise mean cross-entropies of the M x M similarity matrix
/// divided by `temperature`, with the diagonal as positives. The teacher
/// side is treated as constant.
LossGrad contrastive_loss(const Rows& teacher_regions, const Rows& student_regions,
                          double temperature = 0.07);

/// (1 + gamma_e * mean entropy of dyn_soft) * (1 + gamma_p * pseudo_count),
/// clamped to [1, factor_cap].
double weight_factor(const Rows& dyn_soft, std::size_t pseudo_count, const LossWeights& weights);
/// Same formula from a precomputed mean entropy.
double weight_factor(double mean_entropy, std::size_t pseudo_count, const LossWeights& weights);

struct LossParts {
  double rpn = 0.0;
  double roi = 0.0;
  double kl_distill = 0.0;
  double feature_distill = 0.0;
  double entropy = 0.0;
  double contrastive = 0.0;

  std::array<double, 6> as_array() const {
    return {rpn, roi, kl_distill, feature_distill, entropy, contrastive};
  }
};

struct LossBreakdown : LossParts {
  double factor = 1.0;
  double total = 0.0;
};

extern const std::array<const char*, 6> kLossTermNames;

/// total = factor * sum_i w_i * part_i. Throws NumericError naming the first
/// non-finite part.
LossBreakdown total(const LossParts& parts, double factor, const LossWeights& weights);

/// d total / d part_i = factor * w_i.
std::array<double, 6> loss_coefficients(double factor, const LossWeights& weights);

/// Throws ContractViolation unless every row is a probability vector
/// (entries >= 0, sum within `tol` of 1) of a common length.
void require_probability_rows(const Rows& rows, const char* what, double tol = 1e-4);

}  // namespace dla
