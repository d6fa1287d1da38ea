#include "mec/matkernel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mec {

EmbeddingBatch::EmbeddingBatch(Matrix columns) : z_(std::move(columns)) {
  if (z_.rows() < 1 || z_.cols() < 1) {
    throw ShapeError("EmbeddingBatch: need d >= 1 and m >= 1, got " + z_.shape_string());
  }
  for (std::size_t c = 0; c < z_.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < z_.rows(); ++r) sq += z_(r, c) * z_(r, c);
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitTolerance) {
      throw std::invalid_argument("EmbeddingBatch: column " + std::to_string(c) +
                                  " has norm " + std::to_string(std::sqrt(sq)));
    }
  }
}

EmbeddingBatch EmbeddingBatch::normalized(Matrix raw) {
  for (std::size_t c = 0; c < raw.cols(); ++c) {
    double sq = 0.0;
    for (std::size_t r = 0; r < raw.rows(); ++r) sq += raw(r, c) * raw(r, c);
    if (sq == 0.0) {
      throw std::invalid_argument("EmbeddingBatch: column " + std::to_string(c) + " is zero");
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t r = 0; r < raw.rows(); ++r) raw(r, c) *= inv;
  }
  return EmbeddingBatch(std::move(raw));
}

CodingConfig::CodingConfig(std::size_t m_, std::size_t d_, double eps, int n)
    : m(m_), d(d_), eps_d_sq(eps), order(n) {
  if (m < 1 || d < 1) throw std::invalid_argument("CodingConfig: m and d must be >= 1");
  if (!(eps_d_sq > 0.0) || !std::isfinite(eps_d_sq)) {
    throw std::invalid_argument("CodingConfig: eps_d_sq must be positive");
  }
  if (order < 1) throw std::invalid_argument("CodingConfig: order must be >= 1");
}

Matrix gram(const Matrix& a, const Matrix& b, Side side) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("gram: operands must share a shape, got " + a.shape_string() + " and " +
                     b.shape_string());
  }
  return side == Side::Batch ? matmul(a, b, Trans::Yes, Trans::No)
                             : matmul(a, b, Trans::No, Trans::Yes);
}

LuFactorization::LuFactorization(Matrix a) : lu_(std::move(a)) {
  if (!lu_.square()) throw ShapeError("LU: matrix is " + lu_.shape_string());
  const std::size_t n = lu_.rows();
  perm_.resize(n);
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});

  for (std::size_t k = 0; k < n; ++k) {
    std::size_t pivot = k;
    double best = std::abs(lu_(k, k));
    for (std::size_t r = k + 1; r < n; ++r) {
      const double v = std::abs(lu_(r, k));
      if (v > best) {
        best = v;
        pivot = r;
      }
    }
    if (!(best > 0.0) || !std::isfinite(best)) {
      throw SingularMatrixError("LU: zero or non-finite pivot at column " + std::to_string(k));
    }
    if (pivot != k) {
      std::swap_ranges(lu_.row(k).begin(), lu_.row(k).end(), lu_.row(pivot).begin());
      std::swap(perm_[k], perm_[pivot]);
      sign_ = -sign_;
    }
    const double diag = lu_(k, k);
    if (diag < 0.0) sign_ = -sign_;
    log_abs_det_ += std::log(std::abs(diag));

    const double* pivot_row = lu_.row(k).data();
    for (std::size_t r = k + 1; r < n; ++r) {
      double* row = lu_.row(r).data();
      const double factor = row[k] / diag;
      row[k] = factor;
      if (factor == 0.0) continue;
      for (std::size_t c = k + 1; c < n; ++c) row[c] -= factor * pivot_row[c];
    }
  }
  if (!std::isfinite(log_abs_det_)) throw SingularMatrixError("LU: non-finite log-determinant");
}

Matrix LuFactorization::solve(const Matrix& b) const {
  const std::size_t n = lu_.rows();
  if (b.rows() != n) throw ShapeError("LU solve: rhs is " + b.shape_string());
  const std::size_t nrhs = b.cols();
  Matrix x(n, nrhs);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = b.row(perm_[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  // forward: L has a unit diagonal
  for (std::size_t i = 0; i < n; ++i) {
    double* xi = x.row(i).data();
    for (std::size_t k = 0; k < i; ++k) {
      const double l = lu_(i, k);
      if (l == 0.0) continue;
      const double* xk = x.row(k).data();
      for (std::size_t c = 0; c < nrhs; ++c) xi[c] -= l * xk[c];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double* xi = x.row(ii).data();
    for (std::size_t k = ii + 1; k < n; ++k) {
      const double u = lu_(ii, k);
      if (u == 0.0) continue;
      const double* xk = x.row(k).data();
      for (std::size_t c = 0; c < nrhs; ++c) xi[c] -= u * xk[c];
    }
    const double inv = 1.0 / lu_(ii, ii);
    for (std::size_t c = 0; c < nrhs; ++c) xi[c] *= inv;
  }
  return x;
}

Matrix LuFactorization::inverse() const { return solve(Matrix::identity(lu_.rows())); }

double logdet_ipc(const Matrix& c) {
  if (!c.square()) throw ShapeError("logdet_ipc: matrix is " + c.shape_string());
  Matrix a = c;
  for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) += 1.0;
  const LuFactorization lu(std::move(a));
  if (lu.sign() < 0) {
    throw SingularMatrixError("logdet_ipc: det(I + c) is negative; spectral precondition violated");
  }
  return lu.log_abs_det();
}

std::vector<double> taylor_coefficients(int order) {
  if (order < 1) throw std::invalid_argument("taylor_coefficients: order must be >= 1");
  std::vector<double> coeffs(static_cast<std::size_t>(order));
  for (int k = 1; k <= order; ++k) coeffs[static_cast<std::size_t>(k - 1)] = (k % 2 == 0 ? -1.0 : 1.0) / k;
  return coeffs;
}

double trace_series(const Matrix& c, std::span<const double> coeffs) {
  if (!c.square()) throw ShapeError("trace_series: matrix is " + c.shape_string());
  if (coeffs.empty()) throw std::invalid_argument("trace_series: no coefficients");
  Matrix power = c;
  double total = coeffs[0] * power.trace();
  for (std::size_t k = 1; k < coeffs.size(); ++k) {
    power = matmul(power, c);
    total += coeffs[k] * power.trace();
  }
  return total;
}

double trace_log_taylor(const Matrix& c, int order) {
  if (!c.square()) throw ShapeError("trace_log_taylor: matrix is " + c.shape_string());
  return trace_series(c, taylor_coefficients(order));
}

double holder_bound(const Matrix& c) {
  if (!c.square()) throw ShapeError("holder_bound: matrix is " + c.shape_string());
  const std::size_t n = c.rows();
  std::vector<double> col_sums(n, 0.0);
  double max_row = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double row_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double v = std::abs(c(r, k));
      row_sum += v;
      col_sums[k] += v;
    }
    max_row = std::max(max_row, row_sum);
  }
  const double max_col = n == 0 ? 0.0 : *std::max_element(col_sums.begin(), col_sums.end());
  return std::sqrt(max_col * max_row);
}

double power_iteration_norm(const Matrix& c, double tol, int max_iter) {
  const std::size_t n = c.cols();
  const std::size_t rows = c.rows();
  if (n == 0 || rows == 0) return 0.0;

  std::mt19937_64 rng(0x5eed5eedULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = gauss(rng);

  auto normalize = [](std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& e : x) e /= s;
    return s;
  };
  normalize(v);

  std::vector<double> cv(rows);
  std::vector<double> w(n);
  double estimate = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = c.row(r);
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k) s += row[k] * v[k];
      cv[r] = s;
    }
    // ||c v|| with unit v never exceeds ||c||_2.
    double sq = 0.0;
    for (double e : cv) sq += e * e;
    const double next = std::sqrt(sq);
    if (next == 0.0) return estimate;

    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = c.row(r);
      const double a = cv[r];
      for (std::size_t k = 0; k < n; ++k) w[k] += row[k] * a;
    }
    const bool done = it > 0 && std::abs(next - estimate) <= tol * std::max(1.0, next);
    estimate = std::max(estimate, next);
    if (done) break;
    v.swap(w);
    normalize(v);
  }
  return estimate;
}

SpectralBound spectral_bound(const Matrix& c) {
  if (!c.square()) throw ShapeError("spectral_bound: matrix is " + c.shape_string());
  return {holder_bound(c), power_iteration_norm(c)};
}

Matrix random_unit_columns(std::size_t d, std::size_t m, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix z(d, m);
  for (double& v : z.data()) v = gauss(rng);
  return EmbeddingBatch::normalized(std::move(z)).matrix();
}

}  // namespace mec
