#include "contplan/barrier.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace contplan {

BarrierConfig::BarrierConfig(double a) : alpha(a) {
  if (!(a > 0.0 && a <= 1.0)) throw std::invalid_argument("barrier alpha must lie in (0, 1]");
}

BarrierEval eval_barrier(const Eigen::Vector2d& p, const AxisAlignedEllipse& obs) {
  const Eigen::Vector2d diff = p - obs.center;
  const double lx = obs.semi_axes.x();
  const double ly = obs.semi_axes.y();
  BarrierEval out;
  out.d = std::hypot(diff.x() / lx, diff.y() / ly);
  // atan2(0, 0) is 0, which is the documented tie-break at the center.
  out.omega = std::atan2(lx * diff.y(), ly * diff.x());
  if (out.omega == -std::numbers::pi) out.omega = std::numbers::pi;
  out.value = out.d - 1.0;
  return out;
}

double barrier_step_residual(double d_k, double d_k1, double alpha) { return (d_k1 - 1.0) - (1.0 - alpha) * (d_k - 1.0); }

double min_feasible_d(double d_k, double alpha) { return std::max(1.0, 1.0 + (1.0 - alpha) * (d_k - 1.0)); }

}  // namespace contplan
