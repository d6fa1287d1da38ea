#pragma once

#include "mec/objective.hpp"

namespace mec {

enum class BaselineKind { SimSiam, Barlow, InfoNce };
enum class BarlowNorm { L2, BatchNorm };

struct BaselineConfig {
  BaselineKind kind = BaselineKind::SimSiam;
  double temperature = 0.1;    // InfoNCE only
  double lambda_barlow = 5e-3; // off-diagonal weight
  BarlowNorm normalization = BarlowNorm::L2;

  void validate() const;
};

struct CompositeConfig {
  BaselineConfig base;
  MecLossConfig mec;
  double reg_weight = 1.0;
};

/// -sum_i z1_i . z2_i
LossResult simsiam_loss(const Matrix& z1, const Matrix& z2);

/// Barlow Twins on the d x d cross-correlation C:
///   sum_i (1 - C_ii)^2 + lambda_barlow * sum_{i != j} C_ij^2
/// L2:        C = (d / m) Z1 Z2^T on the unit columns as given.
/// BatchNorm: each feature row is standardized over the batch, C = Z1' Z2'^T / m.
LossResult barlow_loss(const Matrix& z1, const Matrix& z2, const BaselineConfig& cfg);

/// Cross-correlation used by barlow_loss (exposed for tests).
Matrix barlow_cross_correlation(const Matrix& z1, const Matrix& z2, BarlowNorm norm);

/// In-batch InfoNCE on S = Z1^T Z2 at temperature tau. Each direction is a sum
/// over anchors of -log softmax(S_i. / tau)_i; the result averages the
/// view1->view2 (rows of S) and view2->view1 (rows of S^T) directions.
LossResult infonce_loss(const Matrix& z1, const Matrix& z2, const BaselineConfig& cfg);

LossResult baseline_loss(const Matrix& z1, const Matrix& z2, const BaselineConfig& cfg);

/// base + reg_weight * mec, values and gradients alike.
LossResult composite_loss(const Matrix& z1, const Matrix& z2, const CompositeConfig& cfg);

/// Terms of the second-order expansion of -mu Tr(C - C^2/2), split by position.
///   diagonal             mu * sum_i (-C_ii + C_ii^2 / 2)
///   off_diagonal_squared (mu/2) * sum_{i != j} C_ij^2
///   off_diagonal_cross   (mu/2) * sum_{i != j} C_ij C_ji
/// diagonal + off_diagonal_cross equals the truncated loss for any C;
/// off_diagonal_squared agrees with the cross form only when C is symmetric.
struct SecondOrderTerms {
  double diagonal = 0.0;
  double off_diagonal_squared = 0.0;
  double off_diagonal_cross = 0.0;
};

SecondOrderTerms second_order_terms(const Matrix& c, double mu);

}  // namespace mec
