#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include "mec/matkernel.hpp"

namespace mec {

enum class Form { Batch, Feature, Auto };

struct MecLossConfig {
  CodingConfig coding;
  Form form = Form::Auto;
  bool exact = false;
  bool normalize_by_mu = true;

  /// Auto resolves to the batch side when m <= d.
  Side resolved_side() const;
};

struct LossResult {
  double value = 0.0;
  Matrix grad_z1;
  Matrix grad_z2;
};

/// Raised when the truncated series is asked to run with ||lambda G||_2 >= 1.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(double norm);
  double norm() const { return norm_; }

 private:
  double norm_;
};

/// Cheap Hoelder check first; power iteration only if that bound is >= 1.
/// Returns the smallest bound that was computed.
double check_taylor_convergence(const Matrix& c);

/// MEC loss over two d x m batches whose columns are treated as free unit
/// vectors. Exact path: -mu log det(I + lambda G). Taylor path: order-n truncation.
LossResult mec_loss(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg);
LossResult mec_loss(const EmbeddingBatch& z1, const EmbeddingBatch& z2, const MecLossConfig& cfg);

/// Value-only evaluation (no gradient work).
double mec_value(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg);

using PairLoss = std::function<LossResult(const Matrix&, const Matrix&)>;

/// Max relative error between the analytic gradient of `loss` and central
/// differences with step h. Error per coordinate is |fd - g| / max(1, |fd|, |g|).
/// Every coordinate is probed when a view has at most 512 entries, otherwise a
/// seeded subset of 64 coordinates per view.
double gradcheck(const PairLoss& loss, const Matrix& z1, const Matrix& z2, double h = 1e-5,
                 std::uint64_t seed = 7);

double mec_gradcheck(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg, double h = 1e-5,
                     std::uint64_t seed = 7);

/// |batch - feature| / max(1, |batch|) with both sides evaluated exactly.
double dual_gap(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg);

/// Linear ramp from base/10 at step 0 to base at warmup_steps, flat after.
double lambda_schedule(double base_lambda, std::size_t step, std::size_t warmup_steps);

}  // namespace mec
