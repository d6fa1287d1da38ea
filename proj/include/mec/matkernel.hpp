#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mec/matrix.hpp"

namespace mec {

/// Which Gram product to materialize from two d x m batches.
///   batch   -> m x m  (a^T b)
///   feature -> d x d  (a b^T)
enum class Side { Batch, Feature };

/// A d x m block of unit-norm embedding columns.
class EmbeddingBatch {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  /// Takes columns that are already unit norm; throws otherwise.
  explicit EmbeddingBatch(Matrix columns);

  /// l2-normalizes every column of `raw` (zero columns are rejected).
  static EmbeddingBatch normalized(Matrix raw);

  std::size_t dim() const { return z_.rows(); }
  std::size_t batch() const { return z_.cols(); }
  const Matrix& matrix() const { return z_; }

 private:
  Matrix z_;
};

/// Coding-length constants for an m-sample, d-dimensional batch.
/// lambda = 1 / (m * eps_d_sq), mu = (m + d) / 2.
struct CodingConfig {
  std::size_t m = 1;
  std::size_t d = 1;
  double eps_d_sq = 0.06;
  int order = 4;

  CodingConfig() = default;
  CodingConfig(std::size_t m, std::size_t d, double eps_d_sq, int order = 4);

  double mu() const { return (static_cast<double>(m) + static_cast<double>(d)) / 2.0; }
  double lambda() const { return 1.0 / (static_cast<double>(m) * eps_d_sq); }
  /// Worst-case Hoelder bound on ||lambda Z1^T Z2||_2 for unit columns.
  double holder_worst_case() const { return lambda() * static_cast<double>(m); }
};

Matrix gram(const Matrix& a, const Matrix& b, Side side);

/// log det(I + c) by partial-pivot LU on (I + c).
/// Throws SingularMatrixError on a zero pivot, a non-finite intermediate,
/// or a negative determinant.
double logdet_ipc(const Matrix& c);

/// Tr(sum_{k=1..n} (-1)^{k+1}/k c^k), building c^k by n-1 left-to-right products.
double trace_log_taylor(const Matrix& c, int order);

/// (-1)^{k+1}/k for k = 1..order.
std::vector<double> taylor_coefficients(int order);
/// Tr(sum_k coeffs[k-1] c^k).
double trace_series(const Matrix& c, std::span<const double> coeffs);

struct SpectralBound {
  double holder_bound = 0.0;        // sqrt(||c||_1 ||c||_inf)
  double power_iter_estimate = 0.0; // ||c||_2 by power iteration on c^T c
};

SpectralBound spectral_bound(const Matrix& c);
double holder_bound(const Matrix& c);
double power_iteration_norm(const Matrix& c, double tol = 1e-10, int max_iter = 1000);

/// Partial-pivot LU, kept around for solves.
class LuFactorization {
 public:
  explicit LuFactorization(Matrix a);

  double log_abs_det() const { return log_abs_det_; }
  int sign() const { return sign_; }
  /// Solves a x = b for every column of b.
  Matrix solve(const Matrix& b) const;
  Matrix inverse() const;

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
  double log_abs_det_ = 0.0;
  int sign_ = 1;
};

/// d x m matrix of i.i.d. Gaussian columns scaled to unit norm.
Matrix random_unit_columns(std::size_t d, std::size_t m, std::mt19937_64& rng);

}  // namespace mec
