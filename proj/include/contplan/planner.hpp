#pragma once

#include "contplan/barrier.hpp"
#include "contplan/bezier.hpp"
#include "contplan/reach.hpp"

#include <Eigen/Dense>

#include <array>
#include <chrono>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace contplan {

enum class HorizonMode { kReceding, kShrinking };

/// Column index of the two branches in every (.. x 2) workspace matrix.
enum Branch : int { kNominal = 0, kContingency = 1 };

struct BranchWeights {
  double w_x = 50.0;      ///< longitudinal smoothness (squared acceleration)
  double w_y = 50.0;      ///< lateral smoothness (squared acceleration)
  double w_theta = 50.0;  ///< heading smoothness (squared yaw rate)
  double w_vd = 100.0;    ///< longitudinal speed tracking
  double w_yd = 100.0;    ///< lateral position tracking
};

struct PlannerConfig {
  int horizon = 50;
  int consensus_steps = 5;
  double dt = 0.08;
  int order = 10;
  double alpha = 0.8;
  double p_s = 0.5;
  BranchWeights nominal;
  BranchWeights contingency;

  double rho_x = 5.0;
  double rho_y = 5.0;
  double rho_theta = 5.0;
  double rho_obs_nominal = 5.0;
  double rho_obs_contingency = 5.0;
  double rho_cx = 50.0;
  double rho_cy = 50.0;
  double rho_ctheta = 50.0;
  double relax_x = 1.0;
  double relax_y = 1.0;

  double a_max = 5.0;
  double j_max = 15.0;
  double y_min = -1.0e6;
  double y_max = 1.0e6;
  double x_min = -1.0e6;
  double x_max = 1.0e6;

  double eps_pri = 0.5;
  /// Per-stack overrides; unset stacks use eps_pri. Each must not exceed eps_pri.
  std::optional<double> eps_kinematic;
  std::optional<double> eps_obstacle;
  std::optional<double> eps_consensus = 0.02;
  std::optional<double> eps_inequality;
  /// Largest per-iteration change of planned positions (m) accepted at termination.
  double eps_dual = 0.05;
  int iter_max = 200;
  /// Residual balancing: every adapt_interval iterations the penalty of each
  /// primal stack still above its threshold is multiplied by adapt_factor,
  /// up to adapt_max_scale times its configured value.
  bool adaptive_penalty = true;
  int adapt_interval = 10;
  double adapt_factor = 2.0;
  double adapt_max_scale = 16.0;

  HorizonMode mode = HorizonMode::kReceding;
  double v_xd = 20.0;
  double p_yd = 0.0;

  double duration() const { return horizon * dt; }
  /// Throws std::invalid_argument naming the first offending field.
  void validate() const;
};

class AssumptionViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Obstacle centers and semi-axes per step (rows k = 0..N) and HV (columns).
struct ObstacleSet {
  Eigen::MatrixXd cx, cy, lx, ly;
  int count() const { return static_cast<int>(cx.cols()); }
};

/// Matrices of the reformulated problem for one planning cycle.
struct ProblemData {
  PlannerConfig config;       ///< penalties may be raised during a solve
  PlannerConfig base_config;  ///< as supplied
  BernsteinBasis basis;
  int n_ctrl = 0;  ///< n + 1
  int horizon = 0;
  int consensus = 0;
  int hv_count = 0;

  // Basis columns for steps 1..N: (n+1) x N.
  Eigen::MatrixXd b0, b1, b2, b3;

  // Quadratic costs per branch (already scaled by 1 - p_s or p_s).
  std::array<Eigen::MatrixXd, 2> q_theta, q_x, q_y;  ///< smoothness, (n+1) x (n+1)
  std::array<double, 2> q_xv{}, q_xd{};              ///< speed tracking diagonals (N x N, uniform)
  std::array<double, 2> q_yp{}, q_yd{};              ///< lateral position tracking diagonals

  Eigen::MatrixXd f0;       ///< [B_0 B'_0 B''_0]^T, 3 x (n+1)
  Eigen::MatrixXd f_theta;  ///< [B_0 B'_0 B'_N]^T, 3 x (n+1)
  Eigen::MatrixXd e_x0, e_y0, e_theta;

  Eigen::MatrixXd g;         ///< 6N x (n+1) inequality stack
  Eigen::MatrixXd h_x, h_y;  ///< 6N x 2
  Eigen::MatrixXd a_c;       ///< (n+1) x 3Ns: [B0, dt B1, dt^2 B2] over steps 1..Ns
  Eigen::MatrixXd a_ctheta;  ///< (n+1) x Ns

  std::array<ObstacleSet, 2> obstacles;  ///< [nominal predictions, FRS occupancies]
  Eigen::Vector2d ev_position = Eigen::Vector2d::Zero();

  // Constant KKT matrices, factorized once per cycle: [block][branch].
  std::array<std::array<Eigen::MatrixXd, 2>, 3> hessian;
  std::array<std::array<Eigen::PartialPivLU<Eigen::MatrixXd>, 2>, 3> kkt;
};

enum Block : int { kThetaBlock = 0, kXBlock = 1, kYBlock = 2 };

struct ResidualBreakdown {
  int iteration = 0;
  double kinematic = 0.0;   ///< m/s
  double obstacle = 0.0;    ///< m
  double consensus = 0.0;   ///< m (derivative rows scaled by dt^r) and rad
  double inequality = 0.0;  ///< violated-bound magnitude
  double dual = 0.0;        ///< position change since previous iterate, m
  double max_primal() const;
};

struct AdmmWorkspace {
  Eigen::MatrixXd c_theta, c_x, c_y;        ///< (n+1) x 2
  Eigen::MatrixXd z_x, z_y;                 ///< 6N x 2
  Eigen::MatrixXd omega, d;                 ///< (N M) x 2, row (k-1) M + h
  Eigen::MatrixXd y_x, y_y, y_theta;        ///< 3Ns x 2, 3Ns x 2, Ns x 2
  Eigen::MatrixXd lambda_x, lambda_y;       ///< 6N x 2 (scaled inequality duals)
  Eigen::MatrixXd lambda_theta;             ///< N x 2
  Eigen::MatrixXd lambda_kx, lambda_ky;     ///< N x 2, velocity-heading coupling
  Eigen::MatrixXd lambda_obs_x, lambda_obs_y;
  Eigen::MatrixXd lambda_cx, lambda_cy, lambda_ctheta;
  Eigen::MatrixXd speed;                    ///< N x 2
  int iteration = 0;
  std::vector<ResidualBreakdown> history;

  bool warm = false;            ///< built by shift_warm_start from a converged plan
  bool cold_fallback = false;   ///< shift requested but previous plan unusable
  double refit_residual = 0.0;  ///< max position error of the shifted refit, m
};

struct PlanResult {
  DualBranchTrajectory trajectory;
  std::array<std::vector<EvState>, 2> states;
  bool converged = false;
  int iterations = 0;
  double final_residual = 0.0;
  ResidualBreakdown residuals;
  std::chrono::duration<double> solve_time{0.0};
  /// Actual normalized distances d at k = 0..N per HV, per branch.
  std::array<Eigen::MatrixXd, 2> distances;
  /// barrier_step_residual between consecutive steps, rows k = 0..N-1.
  std::array<Eigen::MatrixXd, 2> barrier_residuals;
  AdmmWorkspace workspace;
  BernsteinBasis basis;
  HorizonMode mode = HorizonMode::kReceding;
};

ProblemData assemble(const PlannerConfig& config, const EvState& ev_state,
                     const std::vector<NominalPrediction>& predictions, const std::vector<ReachTube>& tubes);

/// Builds the constant block Hessians and KKT factorizations from the penalties in pd.config.
void factorize(ProblemData& pd);

/// Cold start: constant-velocity extrapolation for both branches, duals zero.
AdmmWorkspace cold_start(const ProblemData& pd, const EvState& ev_state);

/// Seeds omega and d from the current curves; also refreshes slacks and speed.
void seed_polar(AdmmWorkspace& ws, const ProblemData& pd);

void update_theta(AdmmWorkspace& ws, const ProblemData& pd);
void update_positions(AdmmWorkspace& ws, const ProblemData& pd);
void update_slack_polar(AdmmWorkspace& ws, const ProblemData& pd);
void update_consensus_duals(AdmmWorkspace& ws, const ProblemData& pd);

/// Residual stacks of the current iterate; `prev_c_x/prev_c_y` feed the dual residual.
ResidualBreakdown compute_residuals(const AdmmWorkspace& ws, const ProblemData& pd, const Eigen::MatrixXd& prev_c_x,
                                    const Eigen::MatrixXd& prev_c_y);

/// Restriction of the augmented Lagrangian to one primal block and branch
/// (all other iterates fixed), up to an additive constant.
double block_objective(const AdmmWorkspace& ws, const ProblemData& pd, Block block, int branch);

bool residual_converged(const ResidualBreakdown& r, const PlannerConfig& config);

struct SolveOptions {
  std::ostream* residual_log = nullptr;  ///< CSV: iter,kinematic,obstacle,consensus,inequality,dual
};

PlanResult solve(const PlannerConfig& config, const EvState& ev_state,
                 const std::vector<NominalPrediction>& predictions, const std::vector<ReachTube>& tubes,
                 const AdmmWorkspace* warm = nullptr, const SolveOptions& options = {});

/// Shifted warm start: both branches refit to the contingency suffix of `prev`
/// on `basis`, duals carried over one step later. In receding mode the
/// terminal state is extended at constant velocity; in shrinking mode `basis`
/// must be one step shorter than prev.
AdmmWorkspace shift_warm_start(const PlanResult& prev, const BernsteinBasis& basis, HorizonMode mode);

}  // namespace contplan
