#include "contplan/planner.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

namespace contplan {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kRidge = 1e-9;
constexpr double kMinHeadingSpeed = 0.1;
// Largest change of the projection ray between consecutive samples.
constexpr double kMaxRayTurn = std::numbers::pi / 2;

void require(bool ok, const char* field) {
  if (!ok) throw std::invalid_argument(std::string("planner config: invalid ") + field);
}

double stack_eps(const std::optional<double>& v, double fallback) { return v ? *v : fallback; }

double obstacle_rho(const PlannerConfig& c, int branch) {
  return branch == kNominal ? c.rho_obs_nominal : c.rho_obs_contingency;
}

double wrap_near(double angle, double reference) {
  const double two_pi = 2.0 * std::numbers::pi;
  return angle + two_pi * std::round((reference - angle) / two_pi);
}

int obs_row(int k, int h, int m) { return (k - 1) * m + h; }

// Obstacle targets O + (l_x d cos w, l_y d sin w) for one branch, (N M) x 2.
MatrixXd obstacle_targets(const AdmmWorkspace& ws, const ProblemData& pd, int b) {
  const int m = pd.hv_count;
  const auto& o = pd.obstacles[static_cast<std::size_t>(b)];
  MatrixXd t(pd.horizon * m, 2);
  for (int k = 1; k <= pd.horizon; ++k) {
    for (int h = 0; h < m; ++h) {
      const int r = obs_row(k, h, m);
      const double d = ws.d(r, b);
      const double w = ws.omega(r, b);
      t(r, 0) = o.cx(k, h) + o.lx(k, h) * d * std::cos(w);
      t(r, 1) = o.cy(k, h) + o.ly(k, h) * d * std::sin(w);
    }
  }
  return t;
}

VectorXd heading_targets(const AdmmWorkspace& ws, const ProblemData& pd, int b) {
  const VectorXd vx = pd.b1.transpose() * ws.c_x.col(b);
  const VectorXd vy = pd.b1.transpose() * ws.c_y.col(b);
  const VectorXd th = pd.b0.transpose() * ws.c_theta.col(b);
  VectorXd phi(pd.horizon);
  for (int k = 0; k < pd.horizon; ++k) {
    if (std::hypot(vx(k), vy(k)) < kMinHeadingSpeed) {
      phi(k) = th(k);
    } else {
      phi(k) = wrap_near(std::atan2(vy(k), vx(k)), th(k));
    }
  }
  return phi;
}

// Linear term of one block objective 0.5 c'Hc + g'c.
VectorXd block_gradient(const AdmmWorkspace& ws, const ProblemData& pd, Block block, int b) {
  const auto& c = pd.config;
  if (block == kThetaBlock) {
    VectorXd g = -2.0 * c.rho_theta * pd.b0 * (heading_targets(ws, pd, b) - ws.lambda_theta.col(b) / c.rho_theta);
    if (pd.consensus > 0)
      g -= 2.0 * c.rho_ctheta * pd.a_ctheta * (ws.y_theta.col(b) - ws.lambda_ctheta.col(b) / c.rho_ctheta);
    return g;
  }
  const bool is_x = block == kXBlock;
  const auto bi = static_cast<std::size_t>(b);
  const double rho_box = is_x ? c.rho_x : c.rho_y;
  const double rho_c = is_x ? c.rho_cx : c.rho_cy;
  const MatrixXd& z = is_x ? ws.z_x : ws.z_y;
  const MatrixXd& lam = is_x ? ws.lambda_x : ws.lambda_y;
  const MatrixXd& h = is_x ? pd.h_x : pd.h_y;
  const MatrixXd& y = is_x ? ws.y_x : ws.y_y;
  const MatrixXd& lam_c = is_x ? ws.lambda_cx : ws.lambda_cy;
  const MatrixXd& lam_o = is_x ? ws.lambda_obs_x : ws.lambda_obs_y;

  VectorXd g(pd.n_ctrl);
  if (is_x) {
    g = -pd.q_xd[bi] * c.v_xd * pd.b1.rowwise().sum();
  } else {
    g = -pd.q_yd[bi] * c.p_yd * pd.b0.rowwise().sum();
  }
  g -= 2.0 * rho_box * pd.g.transpose() * (h.col(b) - z.col(b) - lam.col(b) / rho_box);

  const VectorXd th = pd.b0.transpose() * ws.c_theta.col(b);
  VectorXd kin(pd.horizon);
  const MatrixXd& lam_k = is_x ? ws.lambda_kx : ws.lambda_ky;
  for (int k = 0; k < pd.horizon; ++k) kin(k) = ws.speed(k, b) * (is_x ? std::cos(th(k)) : std::sin(th(k)));
  g -= 2.0 * c.rho_theta * pd.b1 * (kin - lam_k.col(b) / c.rho_theta);

  if (pd.hv_count > 0) {
    const double rho_o = obstacle_rho(c, b);
    const MatrixXd targets = obstacle_targets(ws, pd, b);
    VectorXd acc = VectorXd::Zero(pd.horizon);
    for (int k = 1; k <= pd.horizon; ++k) {
      for (int hv = 0; hv < pd.hv_count; ++hv) {
        const int r = obs_row(k, hv, pd.hv_count);
        acc(k - 1) += targets(r, is_x ? 0 : 1) - lam_o(r, b) / rho_o;
      }
    }
    g -= 2.0 * rho_o * pd.b0 * acc;
  }
  if (pd.consensus > 0) g -= 2.0 * rho_c * pd.a_c * (y.col(b) - lam_c.col(b) / rho_c);
  return g;
}

MatrixXd block_constraint(const ProblemData& pd, Block block) { return block == kThetaBlock ? pd.f_theta : pd.f0; }

VectorXd block_rhs(const ProblemData& pd, Block block, int b) {
  switch (block) {
    case kThetaBlock: return pd.e_theta.col(b);
    case kXBlock: return pd.e_x0.col(b);
    default: return pd.e_y0.col(b);
  }
}

VectorXd solve_block(const ProblemData& pd, const AdmmWorkspace& ws, Block block, int b) {
  const VectorXd g = block_gradient(ws, pd, block, b);
  const VectorXd e = block_rhs(pd, block, b);
  VectorXd rhs(pd.n_ctrl + e.size());
  rhs << -g, e;
  const VectorXd sol =
      pd.kkt[static_cast<std::size_t>(block)][static_cast<std::size_t>(b)].solve(rhs);
  return sol.head(pd.n_ctrl);
}

void update_speed(AdmmWorkspace& ws, const ProblemData& pd) {
  for (int b = 0; b < 2; ++b) {
    const VectorXd vx = pd.b1.transpose() * ws.c_x.col(b);
    const VectorXd vy = pd.b1.transpose() * ws.c_y.col(b);
    for (int k = 0; k < pd.horizon; ++k) ws.speed(k, b) = std::hypot(vx(k), vy(k));
  }
}

// Restricts a ray to the part of the level-d set whose edge point lies inside
// the lateral corridor, keeping its fore/aft side.
double corridor_ray(double ray, const AxisAlignedEllipse& obs, double d, const PlannerConfig& c) {
  const double reach = obs.semi_axes.y() * d;
  const double lo = (c.y_min - obs.center.y()) / reach;
  const double hi = (c.y_max - obs.center.y()) / reach;
  if (lo > hi || lo >= 1.0 || hi <= -1.0) return ray;
  const double s = std::clamp(std::sin(ray), std::max(lo, -1.0), std::min(hi, 1.0));
  if (s == std::sin(ray)) return ray;
  const double side = std::cos(ray) < 0.0 ? -1.0 : 1.0;
  return wrap_near(std::atan2(s, side * std::sqrt(std::max(0.0, 1.0 - s * s))), ray);
}

// Projects p + lambda/rho onto the barrier-admissible set, step by step along k.
void update_polar(AdmmWorkspace& ws, const ProblemData& pd) {
  const int m = pd.hv_count;
  if (m == 0) return;
  const double alpha = pd.config.alpha;
  for (int b = 0; b < 2; ++b) {
    const auto& o = pd.obstacles[static_cast<std::size_t>(b)];
    const double rho = obstacle_rho(pd.config, b);
    const VectorXd px = pd.b0.transpose() * ws.c_x.col(b);
    const VectorXd py = pd.b0.transpose() * ws.c_y.col(b);
    for (int h = 0; h < m; ++h) {
      const AxisAlignedEllipse start({o.cx(0, h), o.cy(0, h)}, {o.lx(0, h), o.ly(0, h)});
      const BarrierEval at_start = eval_barrier(pd.ev_position, start);
      double d_prev = at_start.d;
      double ray_prev = at_start.omega;
      for (int k = 1; k <= pd.horizon; ++k) {
        const int r = obs_row(k, h, m);
        const Eigen::Vector2d p(px(k - 1), py(k - 1));
        const AxisAlignedEllipse obs({o.cx(k, h), o.cy(k, h)}, {o.lx(k, h), o.ly(k, h)});
        const Eigen::Vector2d l = obs.semi_axes;
        const double d_req = min_feasible_d(d_prev, alpha);
        const BarrierEval at_p = eval_barrier(p, obs);
        // a point that violates its level keeps its side; rays turn gradually along k
        const double held = ws.omega(r, b);
        const double wanted = at_p.d >= d_req ? at_p.omega : held;
        const double turn = std::clamp(wrap_near(wanted, ray_prev) - ray_prev, -kMaxRayTurn, kMaxRayTurn);
        const double ray = corridor_ray(ray_prev + turn, obs, d_req, pd.config);
        // Tangent half-space of the level set d_req along the chosen ray.
        const Eigen::Vector2d dir(std::cos(ray), std::sin(ray));
        const Eigen::Vector2d edge = obs.center + d_req * l.cwiseProduct(dir);
        const Eigen::Vector2d normal = dir.cwiseQuotient(l).normalized();
        // The multiplier of a half-space is a non-negative scalar along its inward normal.
        const double mu = std::max(0.0, -normal.dot(Eigen::Vector2d(ws.lambda_obs_x(r, b), ws.lambda_obs_y(r, b))));
        ws.lambda_obs_x(r, b) = -mu * normal.x();
        ws.lambda_obs_y(r, b) = -mu * normal.y();
        const Eigen::Vector2d q = p - (mu / rho) * normal;
        const double gap = normal.dot(q - edge);
        const Eigen::Vector2d target = gap >= 0.0 ? q : Eigen::Vector2d(q - gap * normal);
        const BarrierEval ev = eval_barrier(target, obs);
        ws.omega(r, b) = ev.d > 1e-9 ? wrap_near(ev.omega, ray) : ray;
        ws.d(r, b) = std::max(ev.d, d_req);
        d_prev = ws.d(r, b);
        ray_prev = ws.omega(r, b);
      }
    }
  }
}

void update_slack(AdmmWorkspace& ws, const ProblemData& pd, bool relax) {
  const auto& c = pd.config;
  for (int b = 0; b < 2; ++b) {
    for (int axis = 0; axis < 2; ++axis) {
      const bool is_x = axis == 0;
      MatrixXd& z = is_x ? ws.z_x : ws.z_y;
      const MatrixXd& lam = is_x ? ws.lambda_x : ws.lambda_y;
      const MatrixXd& h = is_x ? pd.h_x : pd.h_y;
      const double rho = is_x ? c.rho_x : c.rho_y;
      const double a = relax ? (is_x ? c.relax_x : c.relax_y) : 1.0;
      const VectorXd gc = pd.g * (is_x ? ws.c_x.col(b) : ws.c_y.col(b));
      const VectorXd gc_hat = a * gc + (1.0 - a) * (h.col(b) - z.col(b));
      z.col(b) = (h.col(b) - gc_hat - lam.col(b) / rho).cwiseMax(0.0);
    }
  }
}

void update_consensus_variables(AdmmWorkspace& ws, const ProblemData& pd) {
  if (pd.consensus == 0) return;
  const auto& c = pd.config;
  ws.y_x.setZero();
  ws.y_y.setZero();
  ws.y_theta.setZero();
  for (int b = 0; b < 2; ++b) {
    ws.y_x.col(0) += 0.5 * (pd.a_c.transpose() * ws.c_x.col(b) + ws.lambda_cx.col(b) / c.rho_cx);
    ws.y_y.col(0) += 0.5 * (pd.a_c.transpose() * ws.c_y.col(b) + ws.lambda_cy.col(b) / c.rho_cy);
    ws.y_theta.col(0) += 0.5 * (pd.a_ctheta.transpose() * ws.c_theta.col(b) + ws.lambda_ctheta.col(b) / c.rho_ctheta);
  }
  ws.y_x.col(1) = ws.y_x.col(0);
  ws.y_y.col(1) = ws.y_y.col(0);
  ws.y_theta.col(1) = ws.y_theta.col(0);
}

MatrixXd shift_rows(const MatrixXd& old, int blocks, int old_len, int new_len, int stride = 1) {
  MatrixXd out = MatrixXd::Zero(blocks * new_len * stride, old.cols());
  if (old.rows() != blocks * old_len * stride || old_len == 0) return out;
  for (int blk = 0; blk < blocks; ++blk) {
    for (int k = 0; k < new_len; ++k) {
      const int src = std::min(k + 1, old_len - 1);
      out.middleRows((blk * new_len + k) * stride, stride) = old.middleRows((blk * old_len + src) * stride, stride);
    }
  }
  return out;
}

// Rays from each obstacle slice toward the current EV position.
void seed_rays(AdmmWorkspace& ws, const ProblemData& pd) {
  const int m = pd.hv_count;
  for (int b = 0; b < 2; ++b) {
    const auto& o = pd.obstacles[static_cast<std::size_t>(b)];
    for (int k = 1; k <= pd.horizon; ++k)
      for (int h = 0; h < m; ++h) {
        const AxisAlignedEllipse obs({o.cx(k, h), o.cy(k, h)}, {o.lx(k, h), o.ly(k, h)});
        ws.omega(obs_row(k, h, m), b) = eval_barrier(pd.ev_position, obs).omega;
      }
  }
}

bool workspace_matches(const AdmmWorkspace& ws, const ProblemData& pd) {
  return ws.c_x.rows() == pd.n_ctrl && ws.c_x.cols() == 2 && ws.c_y.rows() == pd.n_ctrl &&
         ws.c_theta.rows() == pd.n_ctrl && ws.lambda_theta.rows() == pd.horizon;
}

void size_workspace(AdmmWorkspace& ws, const ProblemData& pd) {
  const int n6 = 6 * pd.horizon;
  const int nm = pd.horizon * pd.hv_count;
  const bool fresh_rays = ws.omega.rows() != nm || ws.omega.cols() != 2;
  auto fit = [](MatrixXd& m, int rows) {
    if (m.rows() != rows || m.cols() != 2) m = MatrixXd::Zero(rows, 2);
  };
  fit(ws.z_x, n6);
  fit(ws.z_y, n6);
  fit(ws.lambda_x, n6);
  fit(ws.lambda_y, n6);
  fit(ws.lambda_theta, pd.horizon);
  fit(ws.lambda_kx, pd.horizon);
  fit(ws.lambda_ky, pd.horizon);
  fit(ws.omega, nm);
  fit(ws.d, nm);
  fit(ws.lambda_obs_x, nm);
  fit(ws.lambda_obs_y, nm);
  fit(ws.y_x, 3 * pd.consensus);
  fit(ws.y_y, 3 * pd.consensus);
  fit(ws.y_theta, pd.consensus);
  fit(ws.lambda_cx, 3 * pd.consensus);
  fit(ws.lambda_cy, 3 * pd.consensus);
  fit(ws.lambda_ctheta, pd.consensus);
  fit(ws.speed, pd.horizon);
  if (fresh_rays) seed_rays(ws, pd);
}

bool grow(double& rho, double base, const PlannerConfig& c) {
  const double next = std::min(rho * c.adapt_factor, base * c.adapt_max_scale);
  if (next <= rho) return false;
  rho = next;
  return true;
}

bool adapt_penalties(ProblemData& pd, const ResidualBreakdown& r) {
  PlannerConfig& c = pd.config;
  const PlannerConfig& base = pd.base_config;
  bool changed = false;
  if (r.obstacle > stack_eps(c.eps_obstacle, c.eps_pri)) {
    changed |= grow(c.rho_obs_nominal, base.rho_obs_nominal, c);
    changed |= grow(c.rho_obs_contingency, base.rho_obs_contingency, c);
  }
  if (r.consensus > stack_eps(c.eps_consensus, c.eps_pri)) {
    changed |= grow(c.rho_cx, base.rho_cx, c);
    changed |= grow(c.rho_cy, base.rho_cy, c);
    changed |= grow(c.rho_ctheta, base.rho_ctheta, c);
  }
  if (r.kinematic > stack_eps(c.eps_kinematic, c.eps_pri)) changed |= grow(c.rho_theta, base.rho_theta, c);
  if (r.inequality > stack_eps(c.eps_inequality, c.eps_pri)) {
    changed |= grow(c.rho_x, base.rho_x, c);
    changed |= grow(c.rho_y, base.rho_y, c);
  }
  return changed;
}

}  // namespace

void PlannerConfig::validate() const {
  require(horizon >= 1, "horizon");
  require(consensus_steps >= 0 && consensus_steps <= horizon, "consensus_steps");
  require(dt > 0.0 && std::isfinite(dt), "dt");
  require(order >= 3 && order <= kMaxBezierOrder, "order");
  require(alpha > 0.0 && alpha <= 1.0, "alpha");
  require(p_s > 0.0 && p_s < 1.0, "p_s");
  for (const auto* w : {&nominal, &contingency}) {
    require(w->w_x >= 0.0 && w->w_y >= 0.0 && w->w_theta >= 0.0 && w->w_vd >= 0.0 && w->w_yd >= 0.0, "weights");
  }
  require(rho_x > 0.0 && rho_y > 0.0 && rho_theta > 0.0, "rho");
  require(rho_obs_nominal > 0.0 && rho_obs_contingency > 0.0, "rho_obs");
  require(rho_cx > 0.0 && rho_cy > 0.0 && rho_ctheta > 0.0, "rho_c");
  require(relax_x > 0.0 && relax_x < 2.0 && relax_y > 0.0 && relax_y < 2.0, "relax");
  require(a_max > 0.0 && j_max > 0.0, "a_max/j_max");
  require(y_min < y_max && x_min < x_max, "position bounds");
  require(eps_pri > 0.0, "eps_pri");
  for (const auto* e : {&eps_kinematic, &eps_obstacle, &eps_consensus, &eps_inequality}) {
    if (*e) require(**e > 0.0 && **e <= eps_pri, "per-stack eps");
  }
  require(eps_dual > 0.0, "eps_dual");
  require(iter_max >= 1, "iter_max");
  require(adapt_interval >= 1 && adapt_factor >= 1.0 && adapt_max_scale >= 1.0, "penalty adaptation");
}

double ResidualBreakdown::max_primal() const { return std::max({kinematic, obstacle, consensus, inequality}); }

bool residual_converged(const ResidualBreakdown& r, const PlannerConfig& c) {
  return r.kinematic <= stack_eps(c.eps_kinematic, c.eps_pri) && r.obstacle <= stack_eps(c.eps_obstacle, c.eps_pri) &&
         r.consensus <= stack_eps(c.eps_consensus, c.eps_pri) &&
         r.inequality <= stack_eps(c.eps_inequality, c.eps_pri) && r.dual <= c.eps_dual;
}

void factorize(ProblemData& pd) {
  const auto& config = pd.config;
  const int n1 = pd.n_ctrl;
  const int m = pd.hv_count;
  const int ns = pd.consensus;
  const MatrixXd b1b1 = pd.b1 * pd.b1.transpose();
  const MatrixXd b0b0 = pd.b0 * pd.b0.transpose();
  const MatrixXd ridge = kRidge * MatrixXd::Identity(n1, n1);
  const MatrixXd gtg = pd.g.transpose() * pd.g;
  for (int b = 0; b < 2; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const double rho_o = obstacle_rho(config, b);
    MatrixXd h_theta = pd.q_theta[bi] + 2.0 * config.rho_theta * b0b0 + ridge;
    MatrixXd h_x = pd.q_x[bi] + pd.q_xv[bi] * b1b1 + 2.0 * config.rho_x * gtg + 2.0 * config.rho_theta * b1b1 +
                   2.0 * rho_o * m * b0b0 + ridge;
    MatrixXd h_y = pd.q_y[bi] + pd.q_yp[bi] * b0b0 + 2.0 * config.rho_y * gtg + 2.0 * config.rho_theta * b1b1 +
                   2.0 * rho_o * m * b0b0 + ridge;
    if (ns > 0) {
      h_theta += 2.0 * config.rho_ctheta * pd.a_ctheta * pd.a_ctheta.transpose();
      h_x += 2.0 * config.rho_cx * pd.a_c * pd.a_c.transpose();
      h_y += 2.0 * config.rho_cy * pd.a_c * pd.a_c.transpose();
    }
    pd.hessian[kThetaBlock][bi] = h_theta;
    pd.hessian[kXBlock][bi] = h_x;
    pd.hessian[kYBlock][bi] = h_y;
    for (int blk = 0; blk < 3; ++blk) {
      const MatrixXd f = block_constraint(pd, static_cast<Block>(blk));
      const auto rows = f.rows();
      MatrixXd kkt = MatrixXd::Zero(n1 + rows, n1 + rows);
      kkt.topLeftCorner(n1, n1) = pd.hessian[static_cast<std::size_t>(blk)][bi];
      kkt.topRightCorner(n1, rows) = f.transpose();
      kkt.bottomLeftCorner(rows, n1) = f;
      pd.kkt[static_cast<std::size_t>(blk)][bi].compute(kkt);
    }
  }
}

ProblemData assemble(const PlannerConfig& config, const EvState& ev, const std::vector<NominalPrediction>& predictions,
                     const std::vector<ReachTube>& tubes) {
  config.validate();
  if (predictions.size() != tubes.size()) throw std::invalid_argument("assemble: predictions and tubes differ in count");
  if (!ev.allFinite()) throw std::invalid_argument("assemble: EV state is not finite");

  ProblemData pd;
  pd.config = config;
  pd.base_config = config;
  pd.basis = build_basis(config.order, config.horizon, config.duration());
  const int n1 = config.order + 1;
  const int N = config.horizon;
  const int ns = config.consensus_steps;
  const int m = static_cast<int>(predictions.size());
  pd.n_ctrl = n1;
  pd.horizon = N;
  pd.consensus = ns;
  pd.hv_count = m;
  pd.b0 = pd.basis.d[0].rightCols(N);
  pd.b1 = pd.basis.d[1].rightCols(N);
  pd.b2 = pd.basis.d[2].rightCols(N);
  pd.b3 = pd.basis.d[3].rightCols(N);

  const MatrixXd b1b1 = pd.b1 * pd.b1.transpose();
  const MatrixXd b2b2 = pd.b2 * pd.b2.transpose();
  const MatrixXd b0b0 = pd.b0 * pd.b0.transpose();
  for (int b = 0; b < 2; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const double s = b == kNominal ? 1.0 - config.p_s : config.p_s;
    const BranchWeights& w = b == kNominal ? config.nominal : config.contingency;
    pd.q_theta[bi] = 2.0 * s * w.w_theta * b1b1;
    pd.q_x[bi] = 2.0 * s * w.w_x * b2b2;
    pd.q_y[bi] = 2.0 * s * w.w_y * b2b2;
    pd.q_xv[bi] = pd.q_xd[bi] = 2.0 * s * w.w_vd;
    pd.q_yp[bi] = pd.q_yd[bi] = 2.0 * s * w.w_yd;
  }

  pd.f0.resize(3, n1);
  pd.f0.row(0) = pd.basis.d[0].col(0).transpose();
  pd.f0.row(1) = pd.basis.d[1].col(0).transpose();
  pd.f0.row(2) = pd.basis.d[2].col(0).transpose();
  pd.f_theta.resize(3, n1);
  pd.f_theta.row(0) = pd.basis.d[0].col(0).transpose();
  pd.f_theta.row(1) = pd.basis.d[1].col(0).transpose();
  pd.f_theta.row(2) = pd.basis.d[1].col(N).transpose();

  const double th0 = ev(kTheta);
  const double v0 = ev(kSpeed);
  Eigen::Vector3d ex(ev(kPx), v0 * std::cos(th0), ev(kAx));
  Eigen::Vector3d ey(ev(kPy), v0 * std::sin(th0), ev(kAy));
  Eigen::Vector3d et(th0, ev(kThetaDot), 0.0);
  pd.e_x0 = ex.replicate(1, 2);
  pd.e_y0 = ey.replicate(1, 2);
  pd.e_theta = et.replicate(1, 2);
  pd.ev_position = Eigen::Vector2d(ev(kPx), ev(kPy));

  pd.g.resize(6 * N, n1);
  pd.g << pd.b2.transpose(), -pd.b2.transpose(), pd.b3.transpose(), -pd.b3.transpose(), pd.b0.transpose(),
      -pd.b0.transpose();
  VectorXd hx(6 * N), hy(6 * N);
  hx << VectorXd::Constant(2 * N, config.a_max), VectorXd::Constant(2 * N, config.j_max),
      VectorXd::Constant(N, config.x_max), VectorXd::Constant(N, -config.x_min);
  hy << VectorXd::Constant(2 * N, config.a_max), VectorXd::Constant(2 * N, config.j_max),
      VectorXd::Constant(N, config.y_max), VectorXd::Constant(N, -config.y_min);
  pd.h_x = hx.replicate(1, 2);
  pd.h_y = hy.replicate(1, 2);

  pd.a_c.resize(n1, 3 * ns);
  pd.a_ctheta.resize(n1, ns);
  if (ns > 0) {
    pd.a_c << pd.b0.leftCols(ns), config.dt * pd.b1.leftCols(ns), config.dt * config.dt * pd.b2.leftCols(ns);
    pd.a_ctheta = pd.b0.leftCols(ns);
  }

  for (auto& o : pd.obstacles) {
    o.cx.resize(N + 1, m);
    o.cy.resize(N + 1, m);
    o.lx.resize(N + 1, m);
    o.ly.resize(N + 1, m);
  }
  for (int h = 0; h < m; ++h) {
    const auto& pred = predictions[static_cast<std::size_t>(h)];
    const auto& tube = tubes[static_cast<std::size_t>(h)];
    if (pred.hv_id != tube.hv_id) throw std::invalid_argument("assemble: prediction and tube HV ids differ");
    for (int k = 0; k <= N; ++k) {
      const AxisAlignedEllipse nom = pred.occupancy(k);
      const AxisAlignedEllipse& occ = tube.occupancy(k);
      if (!contains(occ.as_ellipsoid(), nom.as_ellipsoid(), 1e-9)) {
        std::ostringstream msg;
        msg << "nominal occupancy of HV " << pred.hv_id << " at step " << k << " is not inside its reachable occupancy";
        throw AssumptionViolation(msg.str());
      }
      pd.obstacles[kNominal].cx(k, h) = nom.center.x();
      pd.obstacles[kNominal].cy(k, h) = nom.center.y();
      pd.obstacles[kNominal].lx(k, h) = nom.semi_axes.x();
      pd.obstacles[kNominal].ly(k, h) = nom.semi_axes.y();
      pd.obstacles[kContingency].cx(k, h) = occ.center.x();
      pd.obstacles[kContingency].cy(k, h) = occ.center.y();
      pd.obstacles[kContingency].lx(k, h) = occ.semi_axes.x();
      pd.obstacles[kContingency].ly(k, h) = occ.semi_axes.y();
    }
  }

  factorize(pd);
  return pd;
}

void seed_polar(AdmmWorkspace& ws, const ProblemData& pd) {
  size_workspace(ws, pd);
  update_speed(ws, pd);
  update_slack(ws, pd, false);
  update_polar(ws, pd);
  update_consensus_variables(ws, pd);
}

AdmmWorkspace cold_start(const ProblemData& pd, const EvState& ev) {
  AdmmWorkspace ws;
  const int n = pd.config.order;
  const double t = pd.config.duration();
  const double vx = ev(kSpeed) * std::cos(ev(kTheta));
  const double vy = ev(kSpeed) * std::sin(ev(kTheta));
  ws.c_x.resize(pd.n_ctrl, 2);
  ws.c_y.resize(pd.n_ctrl, 2);
  ws.c_theta = MatrixXd::Constant(pd.n_ctrl, 2, ev(kTheta));
  for (int j = 0; j <= n; ++j) {
    const double s = t * j / n;
    ws.c_x.row(j).setConstant(ev(kPx) + vx * s);
    ws.c_y.row(j).setConstant(ev(kPy) + vy * s);
  }
  seed_polar(ws, pd);
  return ws;
}

void update_theta(AdmmWorkspace& ws, const ProblemData& pd) {
  MatrixXd next(pd.n_ctrl, 2);
  for (int b = 0; b < 2; ++b) next.col(b) = solve_block(pd, ws, kThetaBlock, b);
  ws.c_theta = next;
}

void update_positions(AdmmWorkspace& ws, const ProblemData& pd) {
  MatrixXd nx(pd.n_ctrl, 2), ny(pd.n_ctrl, 2);
  for (int b = 0; b < 2; ++b) {
    nx.col(b) = solve_block(pd, ws, kXBlock, b);
    ny.col(b) = solve_block(pd, ws, kYBlock, b);
  }
  ws.c_x = nx;
  ws.c_y = ny;
}

void update_slack_polar(AdmmWorkspace& ws, const ProblemData& pd) {
  update_slack(ws, pd, true);
  update_polar(ws, pd);
  update_speed(ws, pd);
}

void update_consensus_duals(AdmmWorkspace& ws, const ProblemData& pd) {
  const auto& c = pd.config;
  update_consensus_variables(ws, pd);
  for (int b = 0; b < 2; ++b) {
    ws.lambda_x.col(b) += c.rho_x * (pd.g * ws.c_x.col(b) - pd.h_x.col(b) + ws.z_x.col(b));
    ws.lambda_y.col(b) += c.rho_y * (pd.g * ws.c_y.col(b) - pd.h_y.col(b) + ws.z_y.col(b));
    ws.lambda_theta.col(b) += c.rho_theta * (pd.b0.transpose() * ws.c_theta.col(b) - heading_targets(ws, pd, b));
    const VectorXd th = pd.b0.transpose() * ws.c_theta.col(b);
    const VectorXd vx = pd.b1.transpose() * ws.c_x.col(b);
    const VectorXd vy = pd.b1.transpose() * ws.c_y.col(b);
    for (int k = 0; k < pd.horizon; ++k) {
      ws.lambda_kx(k, b) += c.rho_theta * (vx(k) - ws.speed(k, b) * std::cos(th(k)));
      ws.lambda_ky(k, b) += c.rho_theta * (vy(k) - ws.speed(k, b) * std::sin(th(k)));
    }
    if (pd.hv_count > 0) {
      const double rho_o = obstacle_rho(c, b);
      const MatrixXd targets = obstacle_targets(ws, pd, b);
      const VectorXd px = pd.b0.transpose() * ws.c_x.col(b);
      const VectorXd py = pd.b0.transpose() * ws.c_y.col(b);
      for (int k = 1; k <= pd.horizon; ++k) {
        for (int h = 0; h < pd.hv_count; ++h) {
          const int r = obs_row(k, h, pd.hv_count);
          ws.lambda_obs_x(r, b) += rho_o * (px(k - 1) - targets(r, 0));
          ws.lambda_obs_y(r, b) += rho_o * (py(k - 1) - targets(r, 1));
        }
      }
    }
    if (pd.consensus > 0) {
      ws.lambda_cx.col(b) += c.rho_cx * (pd.a_c.transpose() * ws.c_x.col(b) - ws.y_x.col(b));
      ws.lambda_cy.col(b) += c.rho_cy * (pd.a_c.transpose() * ws.c_y.col(b) - ws.y_y.col(b));
      ws.lambda_ctheta.col(b) += c.rho_ctheta * (pd.a_ctheta.transpose() * ws.c_theta.col(b) - ws.y_theta.col(b));
    }
  }
  ++ws.iteration;
}

ResidualBreakdown compute_residuals(const AdmmWorkspace& ws, const ProblemData& pd, const MatrixXd& prev_c_x,
                                    const MatrixXd& prev_c_y) {
  ResidualBreakdown r;
  r.iteration = ws.iteration;
  for (int b = 0; b < 2; ++b) {
    const VectorXd vx = pd.b1.transpose() * ws.c_x.col(b);
    const VectorXd vy = pd.b1.transpose() * ws.c_y.col(b);
    const VectorXd th = pd.b0.transpose() * ws.c_theta.col(b);
    for (int k = 0; k < pd.horizon; ++k) {
      const double v = std::hypot(vx(k), vy(k));
      r.kinematic = std::max({r.kinematic, std::abs(vx(k) - v * std::cos(th(k))), std::abs(vy(k) - v * std::sin(th(k)))});
    }
    if (pd.hv_count > 0) {
      const MatrixXd targets = obstacle_targets(ws, pd, b);
      const VectorXd px = pd.b0.transpose() * ws.c_x.col(b);
      const VectorXd py = pd.b0.transpose() * ws.c_y.col(b);
      for (int k = 1; k <= pd.horizon; ++k) {
        for (int h = 0; h < pd.hv_count; ++h) {
          const int row = obs_row(k, h, pd.hv_count);
          r.obstacle = std::max({r.obstacle, std::abs(px(k - 1) - targets(row, 0)), std::abs(py(k - 1) - targets(row, 1))});
        }
      }
    }
    if (pd.consensus > 0) {
      r.consensus = std::max({r.consensus, (pd.a_c.transpose() * ws.c_x.col(b) - ws.y_x.col(b)).cwiseAbs().maxCoeff(),
                              (pd.a_c.transpose() * ws.c_y.col(b) - ws.y_y.col(b)).cwiseAbs().maxCoeff(),
                              (pd.a_ctheta.transpose() * ws.c_theta.col(b) - ws.y_theta.col(b)).cwiseAbs().maxCoeff()});
    }
    r.inequality = std::max({r.inequality, (pd.g * ws.c_x.col(b) - pd.h_x.col(b)).maxCoeff(),
                             (pd.g * ws.c_y.col(b) - pd.h_y.col(b)).maxCoeff()});
    if (prev_c_x.rows() == pd.n_ctrl && prev_c_y.rows() == pd.n_ctrl) {
      r.dual = std::max({r.dual, (pd.b0.transpose() * (ws.c_x.col(b) - prev_c_x.col(b))).cwiseAbs().maxCoeff(),
                         (pd.b0.transpose() * (ws.c_y.col(b) - prev_c_y.col(b))).cwiseAbs().maxCoeff()});
    }
  }
  r.inequality = std::max(0.0, r.inequality);
  return r;
}

double block_objective(const AdmmWorkspace& ws, const ProblemData& pd, Block block, int branch) {
  const VectorXd g = block_gradient(ws, pd, block, branch);
  const MatrixXd& c = block == kThetaBlock ? ws.c_theta : (block == kXBlock ? ws.c_x : ws.c_y);
  const VectorXd cb = c.col(branch);
  const auto& h = pd.hessian[static_cast<std::size_t>(block)][static_cast<std::size_t>(branch)];
  return 0.5 * cb.dot(h * cb) + g.dot(cb);
}

PlanResult solve(const PlannerConfig& config, const EvState& ev, const std::vector<NominalPrediction>& predictions,
                 const std::vector<ReachTube>& tubes, const AdmmWorkspace* warm, const SolveOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  ProblemData pd = assemble(config, ev, predictions, tubes);

  AdmmWorkspace ws;
  if (warm != nullptr && warm->warm && workspace_matches(*warm, pd)) {
    ws = *warm;
    ws.iteration = 0;
    ws.history.clear();
    seed_polar(ws, pd);
  } else {
    ws = cold_start(pd, ev);
    if (warm != nullptr) ws.cold_fallback = true;
  }

  if (options.residual_log != nullptr) *options.residual_log << "iter,kinematic,obstacle,consensus,inequality,dual\n";

  PlanResult out;
  ResidualBreakdown r;
  for (int it = 0; it < config.iter_max; ++it) {
    const MatrixXd prev_x = ws.c_x;
    const MatrixXd prev_y = ws.c_y;
    update_theta(ws, pd);
    update_positions(ws, pd);
    update_slack_polar(ws, pd);
    update_consensus_duals(ws, pd);
    if (!ws.c_x.allFinite() || !ws.c_y.allFinite() || !ws.c_theta.allFinite())
      throw SolverError("planner iterate became non-finite");
    r = compute_residuals(ws, pd, prev_x, prev_y);
    ws.history.push_back(r);
    if (options.residual_log != nullptr) {
      *options.residual_log << r.iteration << ',' << r.kinematic << ',' << r.obstacle << ',' << r.consensus << ','
                            << r.inequality << ',' << r.dual << '\n';
    }
    if (residual_converged(r, config)) {
      out.converged = true;
      break;
    }
    if (config.adaptive_penalty && (it + 1) % config.adapt_interval == 0 && adapt_penalties(pd, r)) factorize(pd);
  }

  out.iterations = ws.iteration;
  out.residuals = r;
  out.final_residual = r.max_primal();
  out.basis = pd.basis;
  out.mode = config.mode;
  out.trajectory.nominal = {ws.c_x.col(kNominal), ws.c_y.col(kNominal), ws.c_theta.col(kNominal)};
  out.trajectory.contingency = {ws.c_x.col(kContingency), ws.c_y.col(kContingency), ws.c_theta.col(kContingency)};
  out.states[kNominal] = reconstruct_states(out.trajectory.nominal, pd.basis);
  out.states[kContingency] = reconstruct_states(out.trajectory.contingency, pd.basis);
  for (int b = 0; b < 2; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    const auto& o = pd.obstacles[bi];
    MatrixXd dist(pd.horizon + 1, pd.hv_count);
    MatrixXd res(pd.horizon, pd.hv_count);
    for (int h = 0; h < pd.hv_count; ++h) {
      for (int k = 0; k <= pd.horizon; ++k) {
        const auto& s = out.states[bi][static_cast<std::size_t>(k)];
        const Eigen::Vector2d p = k == 0 ? pd.ev_position : Eigen::Vector2d(s(kPx), s(kPy));
        dist(k, h) = eval_barrier(p, AxisAlignedEllipse({o.cx(k, h), o.cy(k, h)}, {o.lx(k, h), o.ly(k, h)})).d;
        if (k > 0) res(k - 1, h) = barrier_step_residual(dist(k - 1, h), dist(k, h), config.alpha);
      }
    }
    out.distances[bi] = dist;
    out.barrier_residuals[bi] = res;
  }
  out.workspace = std::move(ws);
  out.solve_time = std::chrono::steady_clock::now() - t0;
  return out;
}

AdmmWorkspace shift_warm_start(const PlanResult& prev, const BernsteinBasis& basis, HorizonMode mode) {
  AdmmWorkspace ws;
  const int old_n = prev.basis.horizon;
  const int new_n = basis.horizon;
  if (!prev.converged || old_n < 1) {
    ws.cold_fallback = true;
    return ws;
  }
  if (mode == HorizonMode::kShrinking && new_n != old_n - 1)
    throw std::invalid_argument("shift_warm_start: shrinking horizon must drop exactly one step");
  if (mode == HorizonMode::kReceding && new_n != old_n)
    throw std::invalid_argument("shift_warm_start: receding horizon must keep its length");

  const BranchCurve& src = prev.trajectory.contingency;
  const VectorXd px = prev.basis.pos().transpose() * src.cx;
  const VectorXd py = prev.basis.pos().transpose() * src.cy;
  const VectorXd pt = prev.basis.pos().transpose() * src.ctheta;
  const VectorXd vx = prev.basis.vel().transpose() * src.cx;
  const VectorXd vy = prev.basis.vel().transpose() * src.cy;
  const VectorXd vt = prev.basis.vel().transpose() * src.ctheta;
  const VectorXd ax = prev.basis.acc().transpose() * src.cx;
  const VectorXd ay = prev.basis.acc().transpose() * src.cy;
  const double dt = prev.basis.dt();

  std::vector<FitSample> sx, sy, st;
  for (int k = 0; k <= new_n; ++k) {
    const int j = k + 1;
    FitSample fx, fy, ft;
    fx.step = fy.step = ft.step = k;
    if (j <= old_n) {
      fx.position = px(j);
      fy.position = py(j);
      ft.position = pt(j);
    } else {
      const double extra = dt * (j - old_n);
      fx.position = px(old_n) + vx(old_n) * extra;
      fy.position = py(old_n) + vy(old_n) * extra;
      ft.position = pt(old_n);
    }
    if (k == 0) {
      fx.velocity = vx(1);
      fy.velocity = vy(1);
      ft.velocity = vt(1);
      fx.acceleration = ax(1);
      fy.acceleration = ay(1);
      fx.velocity_weight = fy.velocity_weight = ft.velocity_weight = 1.0;
      fx.acceleration_weight = fy.acceleration_weight = 1.0;
    }
    sx.push_back(fx);
    sy.push_back(fy);
    st.push_back(ft);
  }
  const FitResult rx = fit_curve(sx, basis);
  const FitResult ry = fit_curve(sy, basis);
  const FitResult rt = fit_curve(st, basis);
  ws.c_x = rx.control.replicate(1, 2);
  ws.c_y = ry.control.replicate(1, 2);
  ws.c_theta = rt.control.replicate(1, 2);
  ws.refit_residual = std::max(rx.max_residual, ry.max_residual);

  const AdmmWorkspace& p = prev.workspace;
  const int m = old_n > 0 ? static_cast<int>(p.lambda_obs_x.rows()) / old_n : 0;
  ws.lambda_x = shift_rows(p.lambda_x, 6, old_n, new_n);
  ws.lambda_y = shift_rows(p.lambda_y, 6, old_n, new_n);
  ws.lambda_theta = shift_rows(p.lambda_theta, 1, old_n, new_n);
  ws.lambda_kx = shift_rows(p.lambda_kx, 1, old_n, new_n);
  ws.lambda_ky = shift_rows(p.lambda_ky, 1, old_n, new_n);
  ws.lambda_obs_x = shift_rows(p.lambda_obs_x, 1, old_n, new_n, m);
  ws.lambda_obs_y = shift_rows(p.lambda_obs_y, 1, old_n, new_n, m);
  ws.omega = shift_rows(p.omega, 1, old_n, new_n, m);
  ws.d = shift_rows(p.d, 1, old_n, new_n, m);
  const int ns = static_cast<int>(p.lambda_ctheta.rows());
  const int ns_new = std::min(ns, new_n);
  if (ns > 0) {
    ws.lambda_cx = shift_rows(p.lambda_cx, 3, ns, ns_new);
    ws.lambda_cy = shift_rows(p.lambda_cy, 3, ns, ns_new);
    ws.lambda_ctheta = shift_rows(p.lambda_ctheta, 1, ns, ns_new);
  }
  ws.warm = true;
  return ws;
}

}  // namespace contplan
