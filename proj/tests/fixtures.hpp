#pragma once

#include "contplan/intent.hpp"
#include "contplan/planner.hpp"
#include "contplan/reach.hpp"

#include "oracles.hpp"

#include <Eigen/Dense>

#include <vector>

namespace fixture {

using namespace contplan;

inline HvModel hv_model(double dt = 0.08, double noise = 1e-4, Eigen::Vector2d geometry = Eigen::Vector2d(5.5, 2.2)) {
  return HvModel::double_integrator(dt, noise * Eigen::Matrix4d::Identity(), AxisAlignedEllipse(Eigen::Vector2d::Zero(), geometry));
}

struct HvInputs {
  std::vector<NominalPrediction> predictions;
  std::vector<ReachTube> tubes;
};

inline HvInputs hv_inputs(const PlannerConfig& cfg, const std::vector<Eigen::Vector4d>& hvs,
                          const Ellipsoid& intent = init_intent(0, 0.2, 0.1).ellipsoid) {
  const HvModel m = hv_model(cfg.dt);
  HvInputs in;
  int id = 1;
  for (const auto& z : hvs) {
    in.predictions.push_back(predict_constant_velocity(m, z, cfg.horizon, id));
    in.tubes.push_back(propagate_frs(m, z, intent, cfg.horizon, id));
    ++id;
  }
  return in;
}

inline EvState ev_state(double px, double py, double v, double theta = 0.0) {
  EvState s = EvState::Zero();
  s(kPx) = px;
  s(kPy) = py;
  s(kSpeed) = v;
  s(kTheta) = theta;
  return s;
}

/// Longitudinal tracking QP without obstacles, kinematics or bounds:
/// min w_x sum a_k^2 + w_vd sum (v_k - v_xd)^2 over k = 1..N, subject to the
/// initial position, velocity and acceleration. Returns positions at k = 0..N.
inline Eigen::VectorXd tracking_qp_positions(const PlannerConfig& cfg, double p0, double v0, double a0,
                                             const BranchWeights& w, double v_target) {
  const int n = cfg.order, N = cfg.horizon;
  const double t = N * cfg.dt;
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n + 1, n + 1);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n + 1);
  for (int k = 1; k <= N; ++k) {
    const double nu = static_cast<double>(k) / N;
    const Eigen::VectorXd b1 = oracle::bernstein_deriv(n, 1, nu) / t;
    const Eigen::VectorXd b2 = oracle::bernstein_deriv(n, 2, nu) / (t * t);
    h += 2.0 * w.w_x * b2 * b2.transpose() + 2.0 * w.w_vd * b1 * b1.transpose();
    g += -2.0 * w.w_vd * v_target * b1;
  }
  Eigen::MatrixXd f(3, n + 1);
  f.row(0) = oracle::bernstein_deriv(n, 0, 0.0).transpose();
  f.row(1) = oracle::bernstein_deriv(n, 1, 0.0).transpose() / t;
  f.row(2) = oracle::bernstein_deriv(n, 2, 0.0).transpose() / (t * t);
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + 4, n + 4);
  kkt.topLeftCorner(n + 1, n + 1) = h;
  kkt.topRightCorner(n + 1, 3) = f.transpose();
  kkt.bottomLeftCorner(3, n + 1) = f;
  Eigen::VectorXd rhs(n + 4);
  rhs << -g, p0, v0, a0;
  const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
  const Eigen::VectorXd c = sol.head(n + 1);
  Eigen::VectorXd out(N + 1);
  for (int k = 0; k <= N; ++k) out(k) = oracle::bernstein_deriv(n, 0, static_cast<double>(k) / N).dot(c);
  return out;
}

/// Velocity and acceleration of the same oracle at k = 0..N, for precondition checks.
inline Eigen::MatrixXd tracking_qp_profile(const PlannerConfig& cfg, double p0, double v0, double a0,
                                           const BranchWeights& w, double v_target) {
  const Eigen::VectorXd pos = tracking_qp_positions(cfg, p0, v0, a0, w, v_target);
  const int N = cfg.horizon;
  Eigen::MatrixXd out(N + 1, 2);
  for (int k = 0; k <= N; ++k) {
    const int a = std::max(0, k - 1), b = std::min(N, k + 1);
    out(k, 0) = (pos(b) - pos(a)) / ((b - a) * cfg.dt);
  }
  for (int k = 0; k <= N; ++k) {
    const int a = std::max(0, k - 1), b = std::min(N, k + 1);
    out(k, 1) = (out(b, 0) - out(a, 0)) / ((b - a) * cfg.dt);
  }
  return out;
}

/// One ADMM sweep in the same order as solve().
inline void iterate(AdmmWorkspace& ws, const ProblemData& pd) {
  update_theta(ws, pd);
  update_positions(ws, pd);
  update_slack_polar(ws, pd);
  update_consensus_duals(ws, pd);
}

}  // namespace fixture
