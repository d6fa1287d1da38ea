#include "mec/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mec {

namespace {

void require_pair(const Matrix& z1, const Matrix& z2, const CodingConfig& coding) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw ShapeError("mec_loss: views differ in shape, " + z1.shape_string() + " vs " +
                     z2.shape_string());
  }
  if (z1.rows() != coding.d || z1.cols() != coding.m) {
    throw ShapeError("mec_loss: coding config expects d=" + std::to_string(coding.d) +
                     ", m=" + std::to_string(coding.m) + " but batch is " + z1.shape_string());
  }
}

Matrix scaled_gram(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg) {
  Matrix c = gram(z1, z2, cfg.resolved_side());
  c *= cfg.coding.lambda();
  return c;
}

}  // namespace

Side MecLossConfig::resolved_side() const {
  switch (form) {
    case Form::Batch:
      return Side::Batch;
    case Form::Feature:
      return Side::Feature;
    case Form::Auto:
      break;
  }
  return coding.m <= coding.d ? Side::Batch : Side::Feature;
}

DivergenceError::DivergenceError(double norm)
    : std::runtime_error("Taylor series diverges: ||lambda G||_2 = " + std::to_string(norm) +
                         " >= 1 (raise eps_d_sq or use the exact path)"),
      norm_(norm) {}

double check_taylor_convergence(const Matrix& c) {
  const double holder = holder_bound(c);
  if (holder < 1.0) return holder;
  const double norm = power_iteration_norm(c);
  if (!(norm < 1.0)) throw DivergenceError(norm);
  return norm;
}

double mec_value(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg) {
  require_pair(z1, z2, cfg.coding);
  const Matrix c = scaled_gram(z1, z2, cfg);
  const double mu = cfg.coding.mu();
  double value;
  if (cfg.exact) {
    value = -mu * logdet_ipc(c);
  } else {
    check_taylor_convergence(c);
    value = -mu * trace_log_taylor(c, cfg.coding.order);
  }
  return cfg.normalize_by_mu ? value / mu : value;
}

LossResult mec_loss(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg) {
  require_pair(z1, z2, cfg.coding);
  const Side side = cfg.resolved_side();
  const Matrix c = scaled_gram(z1, z2, cfg);
  const std::size_t n = c.rows();
  const double mu = cfg.coding.mu();
  const double lambda = cfg.coding.lambda();

  double series;
  // d series / dC, before the transpose.
  Matrix dseries;
  if (cfg.exact) {
    Matrix a = c;
    for (std::size_t i = 0; i < n; ++i) a(i, i) += 1.0;
    const LuFactorization lu(std::move(a));
    if (lu.sign() < 0) {
      throw SingularMatrixError("mec_loss: det(I + lambda G) is negative");
    }
    series = lu.log_abs_det();
    dseries = lu.inverse();
  } else {
    check_taylor_convergence(c);
    const int order = cfg.coding.order;
    // d Tr(C^k)/dC = k (C^{k-1})^T, so the coefficient (-1)^{k+1}/k becomes (-1)^{k+1}.
    dseries = Matrix::identity(n);
    Matrix power = c;
    series = power.trace();
    for (int k = 2; k <= order; ++k) {
      const double sign = k % 2 == 0 ? -1.0 : 1.0;
      Matrix term = power;
      term *= sign;
      dseries += term;
      power = matmul(power, c);
      series += sign / k * power.trace();
    }
  }

  const double scale = cfg.normalize_by_mu ? 1.0 / mu : 1.0;
  LossResult out;
  out.value = -mu * series * scale;

  // dL/dG = -mu * lambda * dseries^T
  Matrix dgram = dseries.transposed();
  dgram *= -mu * lambda * scale;
  if (side == Side::Batch) {
    out.grad_z1 = matmul(z2, dgram, Trans::No, Trans::Yes);
    out.grad_z2 = matmul(z1, dgram);
  } else {
    out.grad_z1 = matmul(dgram, z2);
    out.grad_z2 = matmul(dgram, z1, Trans::Yes, Trans::No);
  }
  return out;
}

LossResult mec_loss(const EmbeddingBatch& z1, const EmbeddingBatch& z2, const MecLossConfig& cfg) {
  return mec_loss(z1.matrix(), z2.matrix(), cfg);
}

double gradcheck(const PairLoss& loss, const Matrix& z1, const Matrix& z2, double h,
                 std::uint64_t seed) {
  const LossResult base = loss(z1, z2);
  std::mt19937_64 rng(seed);
  double worst = 0.0;

  auto probe = [&](int which) {
    const Matrix& grad = which == 0 ? base.grad_z1 : base.grad_z2;
    const std::size_t total = z1.size();
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (total > 512) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(64);
    }
    Matrix a = z1;
    Matrix b = z2;
    Matrix& target = which == 0 ? a : b;
    for (std::size_t idx : coords) {
      const double orig = target.data()[idx];
      target.data()[idx] = orig + h;
      const double plus = loss(a, b).value;
      target.data()[idx] = orig - h;
      const double minus = loss(a, b).value;
      target.data()[idx] = orig;
      const double fd = (plus - minus) / (2.0 * h);
      const double g = grad.data()[idx];
      const double denom = std::max({1.0, std::abs(fd), std::abs(g)});
      worst = std::max(worst, std::abs(fd - g) / denom);
    }
  };
  probe(0);
  probe(1);
  return worst;
}

double mec_gradcheck(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg, double h,
                     std::uint64_t seed) {
  if (!(h >= 1e-6 && h <= 1e-4)) throw std::invalid_argument("mec_gradcheck: h outside [1e-6, 1e-4]");
  return gradcheck([&](const Matrix& a, const Matrix& b) { return mec_loss(a, b, cfg); }, z1, z2, h,
                   seed);
}

double dual_gap(const Matrix& z1, const Matrix& z2, const MecLossConfig& cfg) {
  MecLossConfig batch = cfg;
  batch.exact = true;
  batch.form = Form::Batch;
  MecLossConfig feature = batch;
  feature.form = Form::Feature;
  const double vb = mec_value(z1, z2, batch);
  const double vf = mec_value(z1, z2, feature);
  return std::abs(vb - vf) / std::max(1.0, std::abs(vb));
}

double lambda_schedule(double base_lambda, std::size_t step, std::size_t warmup_steps) {
  if (warmup_steps == 0 || step >= warmup_steps) return base_lambda;
  const double t = static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lambda * (0.1 + 0.9 * t);
}

}  // namespace mec
