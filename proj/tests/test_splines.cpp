#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nowcast/splines.hpp"

using namespace nowcast;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
VectorXd linspace(double a, double b, int n) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = a + (b - a) * i / (n - 1);
  return v;
}

int matrix_rank(const MatrixXd& m, double tol = 1e-8) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  int r = 0;
  for (int i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()(i) > tol) ++r;
  return r;
}
}  // namespace

TEST_CASE("raw cubic basis rows sum to one (partition of unity)") {
  auto pts = linspace(0.0, 30.0, 31);
  auto b = cubic_basis(pts, 10);
  MatrixXd raw = b.X.rowwise() + b.offsets;
  for (int i = 0; i < raw.rows(); ++i) CHECK(raw.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("second-difference penalty has rank K-2") {
  auto b = cubic_basis(linspace(0, 10, 50), 10);
  CHECK(matrix_rank(b.M) == 8);
}

TEST_CASE("penalty quadratic form equals sum of squared second differences") {
  std::mt19937 gen(1);
  std::normal_distribution<double> nd;
  auto b = cubic_basis(linspace(0, 10, 40), 12);
  for (int rep = 0; rep < 20; ++rep) {
    VectorXd kappa(12);
    for (int i = 0; i < 12; ++i) kappa(i) = nd(gen);
    double oracle = 0.0;
    for (int i = 0; i + 2 < 12; ++i) {
      double d2 = kappa(i) - 2.0 * kappa(i + 1) + kappa(i + 2);
      oracle += d2 * d2;
    }
    CHECK(kappa.dot(b.M * kappa) == doctest::Approx(oracle).epsilon(1e-10));
  }
}

TEST_CASE("cubic_basis rejects bad inputs") {
  CHECK_THROWS_AS(cubic_basis(linspace(0, 10, 20), 3), std::invalid_argument);
  VectorXd constant = VectorXd::Constant(10, 2.5);
  CHECK_THROWS_AS(cubic_basis(constant, 8), std::invalid_argument);
}

TEST_CASE("cyclic basis is periodic to machine precision") {
  auto pts = linspace(0.0, 6.0, 7);
  auto b = cyclic_basis(pts, 7.0, 7);
  VectorXd shifted = pts.array() + 7.0;
  MatrixXd again = evaluate_basis(b, shifted);
  CHECK((again - b.X).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cyclic penalty null space is the constant vector") {
  auto b = cyclic_basis(linspace(0, 6, 7), 7.0, 4);
  VectorXd ones = VectorXd::Ones(4);
  CHECK(ones.dot(b.M * ones) == doctest::Approx(0.0).epsilon(1e-14));
  // Constant coefficients give a constant fitted function.
  VectorXd fit = b.X * ones;
  for (int i = 1; i < fit.size(); ++i) CHECK(fit(i) == doctest::Approx(fit(0)).epsilon(1e-12));
  CHECK(matrix_rank(b.M) == 3);
}

TEST_CASE("weekly basis rows repeat across weeks") {
  VectorXd week1 = linspace(0, 6, 7);
  auto b = cyclic_basis(week1, 7.0, 7);
  VectorXd week2 = week1.array() + 7.0;
  MatrixXd rows2 = evaluate_basis(b, week2);
  CHECK((rows2 - b.X).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("cyclic_basis rejects nonpositive period") {
  CHECK_THROWS_AS(cyclic_basis(linspace(0, 6, 7), 0.0, 7), std::invalid_argument);
  CHECK_THROWS_AS(cyclic_basis(linspace(0, 6, 7), -3.0, 7), std::invalid_argument);
}

TEST_CASE("evaluate_basis reproduces training rows") {
  auto pts = linspace(1.0, 20.0, 20);
  auto b = cubic_basis(pts, 9);
  MatrixXd rows = evaluate_basis(b, pts);
  CHECK((rows - b.X).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("temporal extrapolation is linear for any coefficient vector") {
  auto pts = linspace(1.0, 20.0, 20);
  auto b = cubic_basis(pts, 9);
  std::mt19937 gen(5);
  std::normal_distribution<double> nd;
  VectorXd at(3);
  at << 20.0, 21.0, 22.0;
  MatrixXd rows = evaluate_basis(b, at);
  for (int rep = 0; rep < 25; ++rep) {
    VectorXd kappa(9);
    for (int i = 0; i < 9; ++i) kappa(i) = nd(gen);
    double f20 = rows.row(0).dot(kappa);
    double f21 = rows.row(1).dot(kappa);
    double f22 = rows.row(2).dot(kappa);
    // Equally spaced points on a line: second difference vanishes.
    CHECK(f22 - f21 == doctest::Approx(f21 - f20).epsilon(1e-9));
  }
}

TEST_CASE("basis matrices are finite, PSD, and centered") {
  auto bt = cubic_basis(linspace(0, 50, 51), 14);
  auto bc = cyclic_basis(linspace(0, 6, 7), 7.0, 7);
  for (const auto* b : {&bt, &bc}) {
    CHECK(b->X.allFinite());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(b->M);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
  CHECK(bt.X.colwise().mean().cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("penalty is invariant to constant shifts, temporal also to linear trends") {
  auto bt = cubic_basis(linspace(0, 30, 31), 10);
  auto bc = cyclic_basis(linspace(0, 6, 7), 7.0, 7);
  std::mt19937 gen(9);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 10; ++rep) {
    VectorXd kt(10), kc(7);
    for (int i = 0; i < 10; ++i) kt(i) = nd(gen);
    for (int i = 0; i < 7; ++i) kc(i) = nd(gen);
    double qt = kt.dot(bt.M * kt);
    double qc = kc.dot(bc.M * kc);

    VectorXd kt_shift = kt.array() + 3.7;
    VectorXd kc_shift = kc.array() + 3.7;
    CHECK(kt_shift.dot(bt.M * kt_shift) == doctest::Approx(qt).epsilon(1e-9));
    CHECK(kc_shift.dot(bc.M * kc_shift) == doctest::Approx(qc).epsilon(1e-9));

    VectorXd kt_lin = kt;
    for (int i = 0; i < 10; ++i) kt_lin(i) += 0.8 * i;
    CHECK(kt_lin.dot(bt.M * kt_lin) == doctest::Approx(qt).epsilon(1e-9));
  }
}
