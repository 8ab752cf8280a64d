#include "nowcast/splines.hpp"

#include <cmath>
#include <stdexcept>

namespace nowcast {

namespace {

// Uniform cubic B-spline bump on (0,4).
double bump(double u) {
  if (u <= 0.0 || u >= 4.0) return 0.0;
  if (u < 1.0) return u * u * u / 6.0;
  if (u < 2.0) return (-3.0 * u * u * u + 12.0 * u * u - 12.0 * u + 4.0) / 6.0;
  if (u < 3.0) return (3.0 * u * u * u - 24.0 * u * u + 60.0 * u - 44.0) / 6.0;
  double v = 4.0 - u;
  return v * v * v / 6.0;
}

double bump_deriv(double u) {
  if (u <= 0.0 || u >= 4.0) return 0.0;
  if (u < 1.0) return u * u / 2.0;
  if (u < 2.0) return (-9.0 * u * u + 24.0 * u - 12.0) / 6.0;
  if (u < 3.0) return (9.0 * u * u - 48.0 * u + 60.0) / 6.0;
  double v = 4.0 - u;
  return -v * v / 2.0;
}

// Raw (uncentered) temporal basis row at x, with tangent continuation
// outside [lo, hi].
void temporal_row(const BasisWithPenalty& b, double x, Eigen::RowVectorXd& row) {
  double xe = x;
  double slope_at = 0.0;
  bool extrapolate = false;
  if (x < b.lo) {
    xe = b.lo;
    slope_at = x - b.lo;
    extrapolate = true;
  } else if (x > b.hi) {
    xe = b.hi;
    slope_at = x - b.hi;
    extrapolate = true;
  }
  double u = (xe - b.lo) / b.h;
  for (int j = 1; j <= b.K; ++j) {
    double arg = u + 4.0 - j;
    double v = bump(arg);
    if (extrapolate) v += bump_deriv(arg) / b.h * slope_at;
    row(j - 1) = v;
  }
}

void cyclic_row(const BasisWithPenalty& b, double x, Eigen::RowVectorXd& row) {
  double u = std::fmod(x, b.period) / b.h;  // in [0, K)
  if (u < 0.0) u += b.K;
  for (int j = 1; j <= b.K; ++j) {
    double v = 0.0;
    for (int r = -2; r <= 2; ++r) v += bump(u + 4.0 - j + r * b.K);
    row(j - 1) = v;
  }
}

Eigen::MatrixXd raw_rows(const BasisWithPenalty& b, const Eigen::VectorXd& points) {
  Eigen::MatrixXd X(points.size(), b.K);
  Eigen::RowVectorXd row(b.K);
  for (Eigen::Index i = 0; i < points.size(); ++i) {
    if (b.kind == BasisKind::temporal)
      temporal_row(b, points(i), row);
    else
      cyclic_row(b, points(i), row);
    X.row(i) = row;
  }
  return X;
}

}  // namespace

BasisWithPenalty cubic_basis(const Eigen::VectorXd& points, int K) {
  if (K < 4) throw std::invalid_argument("cubic_basis: K must be >= 4");
  if (points.size() < 2) throw std::invalid_argument("cubic_basis: need at least 2 points");
  double lo = points.minCoeff(), hi = points.maxCoeff();
  if (!(hi > lo)) throw std::invalid_argument("cubic_basis: points span a degenerate interval");

  BasisWithPenalty b;
  b.kind = BasisKind::temporal;
  b.K = K;
  b.lo = lo;
  b.hi = hi;
  b.h = (hi - lo) / (K - 3);
  b.knots.resize(K + 4);
  for (int i = 0; i < K + 4; ++i) b.knots(i) = lo + (i - 3) * b.h;

  // Second-order difference penalty, null space {constant, linear}.
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(K - 2, K);
  for (int i = 0; i < K - 2; ++i) {
    D(i, i) = 1.0;
    D(i, i + 1) = -2.0;
    D(i, i + 2) = 1.0;
  }
  b.M = D.transpose() * D;

  Eigen::MatrixXd X = raw_rows(b, points);
  b.offsets = X.colwise().mean();
  b.X = X.rowwise() - b.offsets;
  return b;
}

BasisWithPenalty cyclic_basis(const Eigen::VectorXd& points, double period, int K,
                              BasisKind kind) {
  if (period <= 0.0) throw std::invalid_argument("cyclic_basis: period must be positive");
  if (K < 3) throw std::invalid_argument("cyclic_basis: K must be >= 3");
  if (kind == BasisKind::temporal)
    throw std::invalid_argument("cyclic_basis: kind must be a cyclic kind");

  BasisWithPenalty b;
  b.kind = kind;
  b.K = K;
  b.period = period;
  b.h = period / K;
  b.knots.resize(K + 1);
  for (int i = 0; i <= K; ++i) b.knots(i) = i * b.h;

  // Cyclic second-order differences, indices modulo K; null space is the
  // constant vector only.
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(K, K);
  for (int i = 0; i < K; ++i) {
    D(i, (i + K - 1) % K) += 1.0;
    D(i, i) += -2.0;
    D(i, (i + 1) % K) += 1.0;
  }
  b.M = D.transpose() * D;

  Eigen::MatrixXd X = raw_rows(b, points);
  b.offsets = X.colwise().mean();
  b.X = X.rowwise() - b.offsets;
  return b;
}

Eigen::MatrixXd evaluate_basis(const BasisWithPenalty& basis,
                               const Eigen::VectorXd& new_points) {
  Eigen::MatrixXd X = raw_rows(basis, new_points);
  return X.rowwise() - basis.offsets;
}

}  // namespace nowcast
