#pragma once

#include "contplan/ellipsoid.hpp"

#include <Eigen/Dense>

namespace contplan {

struct BarrierConfig {
  double alpha = 0.8;

  explicit BarrierConfig(double a = 0.8);
};

struct BarrierEval {
  double d = 0.0;
  double omega = 0.0;
  double value = -1.0;  ///< d - 1
};

/// Normalized distance and repulsion angle of p w.r.t. an axis-aligned obstacle,
/// so that p = z + (l_x d cos w, l_y d sin w).
BarrierEval eval_barrier(const Eigen::Vector2d& p, const AxisAlignedEllipse& obs);

/// (d_{k+1} - 1) - (1 - alpha)(d_k - 1); non-negative iff the step satisfies the barrier condition.
double barrier_step_residual(double d_k, double d_k1, double alpha);

/// Smallest distance at step k+1 admitted by the barrier condition: max(1, 1 + (1 - alpha)(d_k - 1)).
double min_feasible_d(double d_k, double alpha);

}  // namespace contplan
