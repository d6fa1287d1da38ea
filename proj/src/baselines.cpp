#include "mec/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace mec {

namespace {

void require_same(const Matrix& z1, const Matrix& z2, const char* who) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols()) {
    throw ShapeError(std::string(who) + ": views differ in shape, " + z1.shape_string() + " vs " +
                     z2.shape_string());
  }
}

constexpr double kBnEps = 1e-5;

struct Standardized {
  Matrix y;
  std::vector<double> inv_std;
};

// Rows are features; standardize each across the batch (biased variance).
Standardized standardize_rows(const Matrix& z) {
  const std::size_t d = z.rows();
  const std::size_t m = z.cols();
  Standardized out{Matrix(d, m), std::vector<double>(d)};
  for (std::size_t i = 0; i < d; ++i) {
    const auto row = z.row(i);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + kBnEps);
    out.inv_std[i] = inv;
    for (std::size_t j = 0; j < m; ++j) out.y(i, j) = (row[j] - mean) * inv;
  }
  return out;
}

// Backward of standardize_rows.
Matrix standardize_rows_backward(const Standardized& s, const Matrix& dy) {
  const std::size_t d = dy.rows();
  const std::size_t m = dy.cols();
  Matrix dx(d, m);
  for (std::size_t i = 0; i < d; ++i) {
    double mean_dy = 0.0;
    double mean_dy_y = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      mean_dy += dy(i, j);
      mean_dy_y += dy(i, j) * s.y(i, j);
    }
    mean_dy /= static_cast<double>(m);
    mean_dy_y /= static_cast<double>(m);
    for (std::size_t j = 0; j < m; ++j) {
      dx(i, j) = s.inv_std[i] * (dy(i, j) - mean_dy - s.y(i, j) * mean_dy_y);
    }
  }
  return dx;
}

double log_sum_exp(std::span<const double> xs) {
  const double mx = *std::max_element(xs.begin(), xs.end());
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace

void BaselineConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("baseline: temperature must be > 0");
  if (!(lambda_barlow >= 0.0)) throw std::invalid_argument("baseline: lambda_barlow must be >= 0");
}

LossResult simsiam_loss(const Matrix& z1, const Matrix& z2) {
  require_same(z1, z2, "simsiam_loss");
  LossResult out;
  double dot = 0.0;
  for (std::size_t i = 0; i < z1.size(); ++i) dot += z1.data()[i] * z2.data()[i];
  out.value = -dot;
  out.grad_z1 = z2 * -1.0;
  out.grad_z2 = z1 * -1.0;
  return out;
}

Matrix barlow_cross_correlation(const Matrix& z1, const Matrix& z2, BarlowNorm norm) {
  require_same(z1, z2, "barlow_cross_correlation");
  const double m = static_cast<double>(z1.cols());
  if (norm == BarlowNorm::L2) {
    return matmul(z1, z2, Trans::No, Trans::Yes) * (static_cast<double>(z1.rows()) / m);
  }
  const auto a = standardize_rows(z1);
  const auto b = standardize_rows(z2);
  return matmul(a.y, b.y, Trans::No, Trans::Yes) * (1.0 / m);
}

LossResult barlow_loss(const Matrix& z1, const Matrix& z2, const BaselineConfig& cfg) {
  require_same(z1, z2, "barlow_loss");
  cfg.validate();
  const std::size_t d = z1.rows();
  const double m = static_cast<double>(z1.cols());

  Standardized a;
  Standardized b;
  Matrix c;
  double scale;
  if (cfg.normalization == BarlowNorm::L2) {
    scale = static_cast<double>(d) / m;
    c = matmul(z1, z2, Trans::No, Trans::Yes) * scale;
  } else {
    a = standardize_rows(z1);
    b = standardize_rows(z2);
    scale = 1.0 / m;
    c = matmul(a.y, b.y, Trans::No, Trans::Yes) * scale;
  }

  LossResult out;
  Matrix dc(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double v = c(i, j);
      if (i == j) {
        out.value += (1.0 - v) * (1.0 - v);
        dc(i, j) = -2.0 * (1.0 - v);
      } else {
        out.value += cfg.lambda_barlow * v * v;
        dc(i, j) = 2.0 * cfg.lambda_barlow * v;
      }
    }
  }
  dc *= scale;
  if (cfg.normalization == BarlowNorm::L2) {
    out.grad_z1 = matmul(dc, z2);
    out.grad_z2 = matmul(dc, z1, Trans::Yes, Trans::No);
  } else {
    out.grad_z1 = standardize_rows_backward(a, matmul(dc, b.y));
    out.grad_z2 = standardize_rows_backward(b, matmul(dc, a.y, Trans::Yes, Trans::No));
  }
  return out;
}

LossResult infonce_loss(const Matrix& z1, const Matrix& z2, const BaselineConfig& cfg) {
  require_same(z1, z2, "infonce_loss");
  cfg.validate();
  const std::size_t m = z1.cols();
  const double tau = cfg.temperature;
  Matrix logits = matmul(z1, z2, Trans::Yes, Trans::No);
  logits *= 1.0 / tau;

  // Softmax is taken row-wise for direction 1->2 and column-wise for 2->1.
  Matrix dlogits(m, m);
  double value = 0.0;
  std::vector<double> buf(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = logits.row(i);
    const double lse = log_sum_exp(row);
    value += lse - row[i];
    for (std::size_t j = 0; j < m; ++j) {
      dlogits(i, j) += 0.5 * (std::exp(row[j] - lse) - (i == j ? 1.0 : 0.0));
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < m; ++i) buf[i] = logits(i, j);
    const double lse = log_sum_exp(buf);
    value += lse - buf[j];
    for (std::size_t i = 0; i < m; ++i) {
      dlogits(i, j) += 0.5 * (std::exp(buf[i] - lse) - (i == j ? 1.0 : 0.0));
    }
  }

  LossResult out;
  out.value = 0.5 * value;
  dlogits *= 1.0 / tau;
  out.grad_z1 = matmul(z2, dlogits, Trans::No, Trans::Yes);
  out.grad_z2 = matmul(z1, dlogits);
  return out;
}

LossResult baseline_loss(const Matrix& z1, const Matrix& z2, const BaselineConfig& cfg) {
  switch (cfg.kind) {
    case BaselineKind::SimSiam:
      return simsiam_loss(z1, z2);
    case BaselineKind::Barlow:
      return barlow_loss(z1, z2, cfg);
    case BaselineKind::InfoNce:
      return infonce_loss(z1, z2, cfg);
  }
  throw std::logic_error("baseline_loss: unknown kind");
}

LossResult composite_loss(const Matrix& z1, const Matrix& z2, const CompositeConfig& cfg) {
  if (!(cfg.reg_weight >= 0.0)) throw std::invalid_argument("composite: reg_weight must be >= 0");
  LossResult out = baseline_loss(z1, z2, cfg.base);
  if (cfg.reg_weight == 0.0) return out;
  const LossResult reg = mec_loss(z1, z2, cfg.mec);
  out.value += cfg.reg_weight * reg.value;
  out.grad_z1 += reg.grad_z1 * cfg.reg_weight;
  out.grad_z2 += reg.grad_z2 * cfg.reg_weight;
  return out;
}

SecondOrderTerms second_order_terms(const Matrix& c, double mu) {
  if (!c.square()) throw ShapeError("second_order_terms: matrix is " + c.shape_string());
  SecondOrderTerms t;
  const std::size_t n = c.rows();
  for (std::size_t i = 0; i < n; ++i) {
    t.diagonal += -c(i, i) + 0.5 * c(i, i) * c(i, i);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      t.off_diagonal_squared += c(i, j) * c(i, j);
      t.off_diagonal_cross += c(i, j) * c(j, i);
    }
  }
  t.diagonal *= mu;
  t.off_diagonal_squared *= mu / 2.0;
  t.off_diagonal_cross *= mu / 2.0;
  return t;
}

}  // namespace mec
