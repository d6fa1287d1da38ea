#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "mec/matrix.hpp"
#include "test_util.hpp"

using namespace mec;

TEST_CASE("matrix construction validates size and finiteness") {
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Matrix(1, 2, std::vector<double>{1, std::numeric_limits<double>::quiet_NaN()}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Matrix(1, 1, std::vector<double>{std::numeric_limits<double>::infinity()}),
                  std::invalid_argument);
  const Matrix m{{1, 2, 3}, {4, 5, 6}};
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m.size() == 6);
  CHECK(m(1, 2) == 6);
  CHECK(m.shape_string() == "2x3");
}

TEST_CASE("transpose, trace, identity") {
  const Matrix m{{1, 2}, {3, 4}, {5, 6}};
  const Matrix t = m.transposed();
  CHECK(t.rows() == 2);
  CHECK(t(1, 2) == 6);
  CHECK(Matrix::identity(4).trace() == 4.0);
  CHECK(Matrix{{1, 2}, {3, 4}}.trace() == 5.0);
}

TEST_CASE("matmul agrees with a triple loop for every transpose combination") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = testutil::gaussian(5, 7, rng);
    const Matrix b = testutil::gaussian(7, 3, rng);
    const Matrix ref = testutil::naive_matmul(a, b);
    CHECK(max_abs_diff(matmul(a, b), ref) < 1e-12);
    CHECK(max_abs_diff(matmul(a.transposed(), b, Trans::Yes, Trans::No), ref) < 1e-12);
    CHECK(max_abs_diff(matmul(a, b.transposed(), Trans::No, Trans::Yes), ref) < 1e-12);
    CHECK(max_abs_diff(matmul(a.transposed(), b.transposed(), Trans::Yes, Trans::Yes), ref) < 1e-12);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
  CHECK_THROWS_AS(max_abs_diff(Matrix(2, 3), Matrix(3, 2)), ShapeError);
}

TEST_CASE("element-wise arithmetic and norms") {
  Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{1, 1}, {1, 1}};
  CHECK((a + b)(1, 1) == 5);
  CHECK((a - b)(0, 0) == 0);
  CHECK((a * 2.0)(0, 1) == 4);
  CHECK((0.5 * a)(1, 0) == 1.5);
  CHECK(frobenius_norm(a) == doctest::Approx(std::sqrt(30.0)));
  a += b;
  CHECK(a(0, 0) == 2);
  CHECK_THROWS_AS(a += Matrix(1, 2), ShapeError);
}

TEST_CASE("columns round-trip") {
  Matrix m(3, 2);
  const std::vector<double> v{1, 2, 3};
  m.set_column(1, v);
  CHECK(m.column(1) == v);
  CHECK(m.column(0) == std::vector<double>{0, 0, 0});
}
