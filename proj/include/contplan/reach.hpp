#pragma once

#include "contplan/ellipsoid.hpp"

#include <Eigen/Dense>

#include <vector>

namespace contplan {

inline constexpr double kEps2 = 1e-6;

/// Double-integrator HV model with zero-order-hold discretization.
struct HvModel {
  Eigen::Matrix4d a;
  Eigen::Matrix<double, 4, 2> b;
  double dt = 0.08;
  Eigen::Matrix4d sigma_omega;
  AxisAlignedEllipse geometry;

  /// A = [[I, dt I], [0, I]], B = [[dt^2/2 I], [dt I]].
  static HvModel double_integrator(double dt, const Eigen::Matrix4d& sigma_omega, const AxisAlignedEllipse& geometry);

  Eigen::Vector4d step(const Eigen::Vector4d& z, const Eigen::Vector2d& u) const { return a * z + b * u; }
};

struct ReachTube {
  int hv_id = 0;
  int start_step = 0;
  std::vector<Ellipsoid> state_sets;
  std::vector<AxisAlignedEllipse> occupancies;

  int horizon() const { return static_cast<int>(state_sets.size()) - 1; }
  /// Occupancy at step k; steps past the horizon reuse the last slice.
  const AxisAlignedEllipse& occupancy(int k) const;
};

struct NominalPrediction {
  int hv_id = 0;
  std::vector<Eigen::Vector2d> centers;
  Eigen::Vector2d semi_axes = Eigen::Vector2d::Ones();

  AxisAlignedEllipse occupancy(int k) const;
};

/// Forward reachable tube from a noisy measurement under the intent set.
ReachTube propagate_frs(const HvModel& model, const Eigen::Vector4d& z_meas, const Ellipsoid& intent, int horizon,
                        int hv_id = 0, int start_step = 0);

/// Runtime diagnostic: state_sets[k+1] of `tube_i` contains state_sets[k] of `tube_next` for all k.
bool one_step_nesting_check(const ReachTube& tube_i, const ReachTube& tube_next, double tol = 1e-6);

NominalPrediction predict_constant_velocity(const HvModel& model, const Eigen::Vector4d& z_meas, int horizon,
                                            int hv_id = 0);

}  // namespace contplan
