#include "contplan/reach.hpp"

#include <stdexcept>

namespace contplan {

HvModel HvModel::double_integrator(double dt, const Eigen::Matrix4d& sigma_omega, const AxisAlignedEllipse& geometry) {
  if (!(dt > 0.0)) throw std::invalid_argument("HvModel: dt must be positive");
  HvModel m;
  m.dt = dt;
  m.a.setIdentity();
  m.a.topRightCorner<2, 2>() = dt * Eigen::Matrix2d::Identity();
  m.b.setZero();
  m.b.topRows<2>() = 0.5 * dt * dt * Eigen::Matrix2d::Identity();
  m.b.bottomRows<2>() = dt * Eigen::Matrix2d::Identity();
  m.sigma_omega = sigma_omega;
  m.geometry = geometry;
  // Validates positive definiteness.
  (void)Ellipsoid(Eigen::Vector4d::Zero(), sigma_omega);
  return m;
}

const AxisAlignedEllipse& ReachTube::occupancy(int k) const {
  if (k < 0) throw std::out_of_range("ReachTube::occupancy: negative step");
  const auto last = occupancies.size() - 1;
  return occupancies[std::min(static_cast<std::size_t>(k), last)];
}

AxisAlignedEllipse NominalPrediction::occupancy(int k) const {
  const auto last = centers.size() - 1;
  return {centers[std::min(static_cast<std::size_t>(k), last)], semi_axes};
}

ReachTube propagate_frs(const HvModel& model, const Eigen::Vector4d& z_meas, const Ellipsoid& intent, int horizon,
                        int hv_id, int start_step) {
  if (horizon < 1) throw std::invalid_argument("propagate_frs: horizon must be >= 1");
  if (intent.dim() != 2) throw std::invalid_argument("propagate_frs: 2-D intent set required");

  const Eigen::MatrixXd a = model.a;
  const Eigen::MatrixXd b = model.b;
  const Ellipsoid control_set(b * intent.center(),
                              b * intent.shape() * b.transpose() + kEps2 * Eigen::Matrix4d::Identity());
  const Ellipsoid geometry = model.geometry.as_ellipsoid();

  ReachTube tube;
  tube.hv_id = hv_id;
  tube.start_step = start_step;
  tube.state_sets.reserve(static_cast<std::size_t>(horizon) + 1);
  tube.occupancies.reserve(static_cast<std::size_t>(horizon) + 1);
  tube.state_sets.emplace_back(z_meas, model.sigma_omega);
  for (int k = 1; k <= horizon; ++k) {
    const Ellipsoid moved = tube.state_sets.back().transformed(a, Eigen::Vector4d::Zero());
    tube.state_sets.push_back(minkowski_outer(moved, control_set));
  }
  for (const auto& s : tube.state_sets) {
    // Axis-align the positional shadow first; the sum of two diagonal shapes stays diagonal.
    const AxisAlignedEllipse shadow = axis_aligned_outer(project_position(s));
    tube.occupancies.push_back(axis_aligned_outer(minkowski_outer(shadow.as_ellipsoid(), geometry)));
  }
  return tube;
}

bool one_step_nesting_check(const ReachTube& tube_i, const ReachTube& tube_next, double tol) {
  if (tube_next.start_step != tube_i.start_step + 1)
    throw std::invalid_argument("one_step_nesting_check: tubes are not one step apart");
  const int n = std::min(tube_i.horizon() - 1, tube_next.horizon());
  for (int k = 0; k <= n; ++k) {
    if (!contains(tube_i.state_sets[static_cast<std::size_t>(k + 1)], tube_next.state_sets[static_cast<std::size_t>(k)],
                  tol))
      return false;
  }
  return true;
}

NominalPrediction predict_constant_velocity(const HvModel& model, const Eigen::Vector4d& z_meas, int horizon,
                                            int hv_id) {
  if (horizon < 1) throw std::invalid_argument("predict_constant_velocity: horizon must be >= 1");
  NominalPrediction p;
  p.hv_id = hv_id;
  p.semi_axes = model.geometry.semi_axes;
  p.centers.reserve(static_cast<std::size_t>(horizon) + 1);
  for (int k = 0; k <= horizon; ++k) p.centers.emplace_back(z_meas.head<2>() + k * model.dt * z_meas.tail<2>());
  return p;
}

}  // namespace contplan
