#pragma once

#include <Eigen/Dense>

namespace nowcast {

enum class BasisKind { temporal, seasonal_cyclic, weekly_cyclic };

// A penalized spline term: design matrix X over the training points and a
// difference penalty M, so that a coefficient vector k is penalized by
// k' M k. Columns of X are centered to sum to zero over the training
// points; the removed column means are kept so out-of-sample evaluations
// line up with the training parametrization.
struct BasisWithPenalty {
  Eigen::MatrixXd X;  // n_points x K, centered
  Eigen::MatrixXd M;  // K x K, symmetric PSD
  BasisKind kind = BasisKind::temporal;
  Eigen::VectorXd knots;
  int K = 0;
  double period = 0.0;           // cyclic kinds only
  double lo = 0.0, hi = 0.0;     // training range (temporal kind)
  double h = 1.0;                // knot spacing
  Eigen::RowVectorXd offsets;    // column means removed from X
};

// Cubic B-spline basis on evenly spaced knots covering the range of
// `points`, with a second-order difference penalty (rank K-2). K >= 4 and
// a nondegenerate range are required.
BasisWithPenalty cubic_basis(const Eigen::VectorXd& points, int K);

// Periodic cubic B-spline basis with wrap-around knots and a cyclic
// second-order difference penalty (differences modulo K, rank K-1).
BasisWithPenalty cyclic_basis(const Eigen::VectorXd& points, double period, int K,
                              BasisKind kind = BasisKind::weekly_cyclic);

// Evaluates the basis at new points: the temporal kind continues linearly
// beyond the boundary knots (tangent continuation of each basis
// function), cyclic kinds wrap modulo the period. Training centering
// offsets are applied.
Eigen::MatrixXd evaluate_basis(const BasisWithPenalty& basis,
                               const Eigen::VectorXd& new_points);

}  // namespace nowcast
