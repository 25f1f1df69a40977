#pragma once

#include <Eigen/Dense>

#include <array>
#include <span>
#include <vector>

namespace contplan {

inline constexpr int kMaxBezierOrder = 15;

/// Bernstein basis of order n sampled at nu_k = k / N, k = 0..N, for a curve of
/// duration T. `d[r]` holds the r-th time derivative (scaled by 1/T^r), r = 0..3;
/// each matrix is (n+1) x (N+1) and column k evaluates the basis at step k.
struct BernsteinBasis {
  int order = 0;
  int horizon = 0;
  double duration = 0.0;
  std::array<Eigen::MatrixXd, 4> d;

  double dt() const { return duration / horizon; }
  const Eigen::MatrixXd& pos() const { return d[0]; }
  const Eigen::MatrixXd& vel() const { return d[1]; }
  const Eigen::MatrixXd& acc() const { return d[2]; }
  const Eigen::MatrixXd& jerk() const { return d[3]; }

  /// r-th nu-derivative of the order-n basis at arbitrary nu (no time scaling).
  static Eigen::VectorXd evaluate(int order, int derivative, double nu);
};

BernsteinBasis build_basis(int order, int horizon, double duration);

struct BranchCurve {
  Eigen::VectorXd cx;
  Eigen::VectorXd cy;
  Eigen::VectorXd ctheta;
};

struct DualBranchTrajectory {
  BranchCurve nominal;
  BranchCurve contingency;
};

/// Index layout of the reconstructed 9-state.
enum StateIndex : int { kPx = 0, kPy, kTheta, kThetaDot, kSpeed, kAx, kAy, kJx, kJy, kStateDim };

using EvState = Eigen::Matrix<double, kStateDim, 1>;

/// States [px, py, theta, theta_dot, v, ax, ay, jx, jy] at k = 0..N.
std::vector<EvState> reconstruct_states(const BranchCurve& curve, const BernsteinBasis& basis);

/// One sample row of a 1-D fit. Velocity/acceleration rows are used when their weight is > 0.
struct FitSample {
  int step = 0;
  double position = 0.0;
  double velocity = 0.0;
  double acceleration = 0.0;
  double velocity_weight = 0.0;
  double acceleration_weight = 0.0;
};

struct FitResult {
  Eigen::VectorXd control;
  double max_residual = 0.0;
  bool rank_deficient = false;
};

/// Minimum-norm least-squares control points reproducing the stacked samples.
FitResult fit_curve(std::span<const FitSample> samples, const BernsteinBasis& basis);

}  // namespace contplan
