#include "contplan/planner.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <random>
#include <sstream>

using namespace contplan;
using Eigen::MatrixXd;
using Eigen::Vector4d;
using Eigen::VectorXd;

namespace {

PlannerConfig tight(PlannerConfig c = {}) {
  c.eps_pri = 1e-6;
  c.eps_consensus = 1e-6;
  c.eps_dual = 1e-7;
  c.iter_max = 4000;
  return c;
}

std::vector<Vector4d> four_hvs() {
  return {Vector4d(40, 0, 12, 0), Vector4d(20, 3.7, 18, 0), Vector4d(-15, 3.7, 22, 0), Vector4d(70, -3.7, 15, 0)};
}

}  // namespace

TEST_SUITE("planner") {
  TEST_CASE("config validation") {
    PlannerConfig c;
    CHECK_NOTHROW(c.validate());
    c.p_s = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.eps_consensus = 0.9;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.consensus_steps = 60;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  }

  TEST_CASE("problem dimensions") {
    PlannerConfig c;
    const auto in = fixture::hv_inputs(c, four_hvs());
    const auto pd = assemble(c, fixture::ev_state(0, 0, 20), in.predictions, in.tubes);
    CHECK(pd.g.rows() == 300);
    CHECK(pd.g.cols() == 11);
    for (const auto& o : pd.obstacles) {
      CHECK(o.count() == 4);
      CHECK(o.cx.rows() == 51);
    }
    for (int h = 0; h < 4; ++h)
      for (int k = 0; k <= 50; ++k) {
        CHECK(pd.obstacles[kNominal].cx(k, h) == in.predictions[h].centers[k].x());
        CHECK(pd.obstacles[kNominal].cy(k, h) == in.predictions[h].centers[k].y());
      }
    const auto empty = assemble(c, fixture::ev_state(0, 0, 20), {}, {});
    CHECK(empty.obstacles[kNominal].count() == 0);
    CHECK(empty.obstacles[kContingency].cx.size() == 0);
  }

  TEST_CASE("prediction outside its tube is rejected") {
    PlannerConfig c;
    auto in = fixture::hv_inputs(c, {Vector4d(40, 0, 12, 0)});
    in.predictions[0] = predict_constant_velocity(fixture::hv_model(), Vector4d(40, 0, 25, 0), c.horizon, 1);
    CHECK_THROWS_AS(assemble(c, fixture::ev_state(0, 0, 20), in.predictions, in.tubes), AssumptionViolation);
  }

  TEST_CASE("straight motion keeps a zero heading and exact equality rows") {
    PlannerConfig c;
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto pd = assemble(c, ev, {}, {});
    auto ws = cold_start(pd, ev);
    update_theta(ws, pd);
    CHECK(ws.c_theta.cwiseAbs().maxCoeff() < 1e-6);
    update_positions(ws, pd);
    for (int b = 0; b < 2; ++b) {
      CHECK((pd.f0 * ws.c_x.col(b) - pd.e_x0.col(b)).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((pd.f0 * ws.c_y.col(b) - pd.e_y0.col(b)).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((pd.f_theta * ws.c_theta.col(b) - pd.e_theta.col(b)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }

  TEST_CASE("block minimizer equals the tracking QP when penalties vanish") {
    PlannerConfig c;
    for (double* r : {&c.rho_x, &c.rho_y, &c.rho_theta, &c.rho_obs_nominal, &c.rho_obs_contingency, &c.rho_cx, &c.rho_cy,
                      &c.rho_ctheta})
      *r = 1e-12;
    const auto ev = fixture::ev_state(0, 0, 15);
    const auto pd = assemble(c, ev, {}, {});
    auto ws = cold_start(pd, ev);
    update_positions(ws, pd);
    const VectorXd oracle = fixture::tracking_qp_positions(c, 0.0, 15.0, 0.0, c.nominal, c.v_xd);
    const VectorXd got = pd.basis.pos().transpose() * ws.c_x.col(kNominal);
    CHECK((got - oracle).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + oracle.cwiseAbs().maxCoeff()));
  }

  TEST_CASE("obstacle-free solve matches the tracking QP") {
    PlannerConfig base;
    base.a_max = 1e3;
    base.j_max = 1e3;
    const auto c = tight(base);
    const auto ev = fixture::ev_state(0, 0, 17);
    const auto profile = fixture::tracking_qp_profile(c, 0.0, 17.0, 0.0, c.nominal, c.v_xd);
    REQUIRE(profile.col(1).cwiseAbs().maxCoeff() < c.a_max);
    const auto plan = solve(c, ev, {}, {});
    CHECK(plan.converged);
    const VectorXd oracle = fixture::tracking_qp_positions(c, 0.0, 17.0, 0.0, c.nominal, c.v_xd);
    for (int b = 0; b < 2; ++b)
      for (int k = 0; k <= c.horizon; ++k) {
        CHECK(std::abs(plan.states[b][k](kPx) - oracle(k)) < 1e-3);
        CHECK(std::abs(plan.states[b][k](kPy)) < 1e-3);
      }
  }

  TEST_CASE("a far-away HV does not change the plan") {
    const auto c = tight();
    const auto ev = fixture::ev_state(0, 0, 17);
    const auto free = solve(c, ev, {}, {});
    const auto in = fixture::hv_inputs(c, {Vector4d(0, 400, 10, 0)});
    const auto far = solve(c, ev, in.predictions, in.tubes);
    for (int k = 0; k <= c.horizon; ++k) {
      CHECK(std::abs(free.states[kNominal][k](kPx) - far.states[kNominal][k](kPx)) < 1e-3);
      CHECK(std::abs(free.states[kNominal][k](kPy) - far.states[kNominal][k](kPy)) < 1e-3);
    }
  }

  TEST_CASE("initial-state rows hold after a solve") {
    PlannerConfig c;
    EvState ev = fixture::ev_state(3, 0.5, 18, 0.05);
    ev(kAx) = 0.7;
    ev(kAy) = -0.2;
    ev(kThetaDot) = 0.02;
    const auto in = fixture::hv_inputs(c, four_hvs());
    const auto plan = solve(c, ev, in.predictions, in.tubes);
    for (int b = 0; b < 2; ++b) {
      const auto& s0 = plan.states[b][0];
      CHECK(s0(kPx) == doctest::Approx(3.0).epsilon(1e-9));
      CHECK(s0(kPy) == doctest::Approx(0.5).epsilon(1e-9));
      CHECK(s0(kSpeed) == doctest::Approx(18.0).epsilon(1e-9));
      CHECK(s0(kAx) == doctest::Approx(0.7).epsilon(1e-9));
      CHECK(s0(kTheta) == doctest::Approx(0.05).epsilon(1e-9));
      CHECK(s0(kThetaDot) == doctest::Approx(0.02).epsilon(1e-9));
      CHECK(std::abs(plan.states[b][c.horizon](kThetaDot)) < 1e-9);
    }
  }

  TEST_CASE("slack update") {
    PlannerConfig c;
    c.y_max = 1.0;
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto pd = assemble(c, ev, {}, {});
    auto ws = cold_start(pd, ev);
    for (int b = 0; b < 2; ++b) {
      const VectorXd z = ws.z_x.col(b);
      CHECK(z.minCoeff() >= 0.0);
      CHECK((pd.g * ws.c_x.col(b) - pd.h_x.col(b) + z).cwiseAbs().maxCoeff() < 1e-9);
    }
    // push the lateral position above y_max: the matching slack entries clamp to zero
    ws.c_y.setConstant(2.0);
    update_slack_polar(ws, pd);
    const int n = pd.horizon;
    for (int k = 0; k < n; ++k) CHECK(ws.z_y(4 * n + k, 0) == 0.0);
    CHECK(ws.z_y.minCoeff() >= 0.0);
  }

  TEST_CASE("distance update follows the barrier recurrence") {
    PlannerConfig c;
    const auto ev = fixture::ev_state(0, 0, 0);
    // one huge static obstacle whose k = 0 slice puts the EV at d = 2
    NominalPrediction pred;
    pred.hv_id = 1;
    pred.semi_axes = Eigen::Vector2d(5, 5);
    ReachTube tube;
    tube.hv_id = 1;
    for (int k = 0; k <= c.horizon; ++k) {
      pred.centers.emplace_back(10, 0);
      tube.state_sets.emplace_back(Vector4d(10, 0, 0, 0), Eigen::Matrix4d::Identity());
      tube.occupancies.emplace_back(Eigen::Vector2d(10, 0), Eigen::Vector2d(5, 5));
    }
    const auto pd = assemble(c, ev, {pred}, {tube});
    auto ws = cold_start(pd, ev);
    // all planned points at the obstacle center (d = 0)
    ws.c_x.setConstant(10.0);
    ws.c_y.setZero();
    ws.lambda_obs_x.setZero();
    ws.lambda_obs_y.setZero();
    update_slack_polar(ws, pd);
    double expect = 2.0;
    for (int k = 1; k <= 5; ++k) {
      expect = min_feasible_d(expect, c.alpha);
      CHECK(ws.d(k - 1, kNominal) == doctest::Approx(expect).epsilon(1e-12));
    }
    CHECK(ws.d(0, kNominal) == doctest::Approx(1.2));
    CHECK(ws.d(1, kNominal) == doctest::Approx(1.04));
  }

  TEST_CASE("distance sequence never drops below the recurrence") {
    PlannerConfig c;
    const auto in = fixture::hv_inputs(c, four_hvs());
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto pd = assemble(c, ev, in.predictions, in.tubes);
    auto ws = cold_start(pd, ev);
    for (int it = 0; it < 40; ++it) {
      fixture::iterate(ws, pd);
      for (int b = 0; b < 2; ++b)
        for (int h = 0; h < 4; ++h) {
          const auto& o = pd.obstacles[b];
          double prev = eval_barrier(pd.ev_position, AxisAlignedEllipse({o.cx(0, h), o.cy(0, h)}, {o.lx(0, h), o.ly(0, h)})).d;
          for (int k = 1; k <= c.horizon; ++k) {
            const double d = ws.d((k - 1) * 4 + h, b);
            CHECK(d >= min_feasible_d(prev, c.alpha));
            if (prev >= 1.0) CHECK(d >= 1.0);
            prev = d;
          }
        }
    }
  }

  TEST_CASE("consensus of identical branches") {
    PlannerConfig c;
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto pd = assemble(c, ev, {}, {});
    auto ws = cold_start(pd, ev);
    const MatrixXd lcx = ws.lambda_cx, lcy = ws.lambda_cy, lct = ws.lambda_ctheta;
    update_consensus_duals(ws, pd);
    CHECK((pd.a_c.transpose() * ws.c_x.col(0) - ws.y_x.col(0)).norm() < 1e-12);
    CHECK((ws.lambda_cx - lcx).norm() < 1e-12);
    CHECK((ws.lambda_cy - lcy).norm() < 1e-12);
    CHECK((ws.lambda_ctheta - lct).norm() < 1e-12);
  }

  TEST_CASE("satisfied obstacle rows leave their duals alone") {
    PlannerConfig c;
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto in = fixture::hv_inputs(c, {Vector4d(0, 60, 0, 0)});
    const auto pd = assemble(c, ev, in.predictions, in.tubes);
    auto ws = cold_start(pd, ev);
    const MatrixXd lx = ws.lambda_obs_x, ly = ws.lambda_obs_y;
    update_consensus_duals(ws, pd);
    CHECK((ws.lambda_obs_x - lx).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ws.lambda_obs_y - ly).cwiseAbs().maxCoeff() < 1e-9);
  }

  TEST_CASE("consensus duals stay zero-mean and blocks descend") {
    PlannerConfig c;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    const auto in = fixture::hv_inputs(c, four_hvs());
    const auto ev = fixture::ev_state(0, 0.3, 19, 0.02);
    const auto pd = assemble(c, ev, in.predictions, in.tubes);
    auto ws = cold_start(pd, ev);
    for (int it = 0; it < 50; ++it) {
      for (auto* lam : {&ws.lambda_x, &ws.lambda_y})
        for (Eigen::Index i = 0; i < lam->size(); ++i) lam->data()[i] += 0.1 * g(rng);
      const MatrixXd cx = ws.c_x, cy = ws.c_y, ct = ws.c_theta;
      double before[3][2];
      for (int blk = 0; blk < 3; ++blk)
        for (int b = 0; b < 2; ++b) before[blk][b] = block_objective(ws, pd, static_cast<Block>(blk), b);
      update_theta(ws, pd);
      for (int b = 0; b < 2; ++b) {
        const double after = block_objective(ws, pd, kThetaBlock, b);
        CHECK(after <= before[kThetaBlock][b] + 1e-8 * std::max(1.0, std::abs(before[kThetaBlock][b])));
      }
      // positions are measured against the new heading
      double mid[2][2];
      for (int b = 0; b < 2; ++b) {
        mid[0][b] = block_objective(ws, pd, kXBlock, b);
        mid[1][b] = block_objective(ws, pd, kYBlock, b);
      }
      update_positions(ws, pd);
      for (int b = 0; b < 2; ++b) {
        CHECK(block_objective(ws, pd, kXBlock, b) <= mid[0][b] + 1e-8 * std::max(1.0, std::abs(mid[0][b])));
        CHECK(block_objective(ws, pd, kYBlock, b) <= mid[1][b] + 1e-8 * std::max(1.0, std::abs(mid[1][b])));
      }
      update_slack_polar(ws, pd);
      update_consensus_duals(ws, pd);
      CHECK((ws.lambda_cx.col(0) + ws.lambda_cx.col(1)).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((ws.lambda_cy.col(0) + ws.lambda_cy.col(1)).cwiseAbs().maxCoeff() < 1e-9);
      CHECK((ws.lambda_ctheta.col(0) + ws.lambda_ctheta.col(1)).cwiseAbs().maxCoeff() < 1e-9);
      (void)cx;
      (void)cy;
      (void)ct;
    }
  }

  TEST_CASE("branch swap symmetry") {
    PlannerConfig c;
    c.p_s = 0.3;
    const auto in = fixture::hv_inputs(c, four_hvs());
    const auto ev = fixture::ev_state(0, 0, 20);
    auto pa = assemble(c, ev, in.predictions, in.tubes);
    PlannerConfig c2 = c;
    c2.p_s = 0.7;
    auto pb = assemble(c2, ev, in.predictions, in.tubes);
    std::swap(pb.obstacles[0], pb.obstacles[1]);
    auto wa = cold_start(pa, ev);
    auto wb = cold_start(pb, ev);
    for (int it = 0; it < 60; ++it) {
      fixture::iterate(wa, pa);
      fixture::iterate(wb, pb);
    }
    for (int b = 0; b < 2; ++b) {
      CHECK((wa.c_x.col(b) - wb.c_x.col(1 - b)).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((wa.c_y.col(b) - wb.c_y.col(1 - b)).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((wa.c_theta.col(b) - wb.c_theta.col(1 - b)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }

  TEST_CASE("empty road cruise") {
    PlannerConfig c;
    const auto plan = solve(c, fixture::ev_state(0, 0, 20), {}, {});
    CHECK(plan.converged);
    double v = 0.0, jerk = 0.0;
    for (const auto& s : plan.states[kNominal]) {
      v += s(kSpeed);
      jerk = std::max({jerk, std::abs(s(kJx)), std::abs(s(kJy))});
    }
    v /= plan.states[kNominal].size();
    CHECK(v == doctest::Approx(20.0).epsilon(0.01));
    CHECK(jerk < 1e-3);
  }

  TEST_CASE("static HV ahead in a narrow corridor") {
    PlannerConfig c;
    c.y_min = -1.5;
    c.y_max = 1.5;
    const auto in = fixture::hv_inputs(c, {Vector4d(110, 0, 0, 0)});
    const auto plan = solve(c, fixture::ev_state(31, 0, 19), in.predictions, in.tubes);
    REQUIRE(plan.converged);
    for (int b = 0; b < 2; ++b) {
      CHECK(plan.distances[b].minCoeff() >= 1.0 - 0.02);
      for (int k = 1; k <= c.horizon; ++k) {
        const auto& s = plan.states[b][k];
        const auto occ = b == kNominal ? in.predictions[0].occupancy(k) : in.tubes[0].occupancy(k);
        CHECK(eval_barrier(Eigen::Vector2d(s(kPx), s(kPy)), occ).d >= 1.0 - 0.02);
        CHECK(std::abs(s(kPy)) < 1.5 + 0.5);
      }
    }
    for (int k = 1; k <= c.consensus_steps; ++k) {
      const auto& a = plan.states[kNominal][k];
      const auto& s = plan.states[kContingency][k];
      CHECK(std::hypot(a(kPx) - s(kPx), a(kPy) - s(kPy)) <= 0.05);
    }
  }

  TEST_CASE("converged means every stack is under its threshold") {
    PlannerConfig c;
    const auto in = fixture::hv_inputs(c, four_hvs());
    std::ostringstream log;
    SolveOptions opts;
    opts.residual_log = &log;
    const auto plan = solve(c, fixture::ev_state(0, 0, 20), in.predictions, in.tubes, nullptr, opts);
    CHECK(log.str().rfind("iter,kinematic,obstacle,consensus,inequality,dual\n", 0) == 0);
    if (plan.converged) {
      CHECK(plan.residuals.max_primal() <= c.eps_pri);
      CHECK(plan.residuals.consensus <= *c.eps_consensus);
      CHECK(plan.residuals.dual <= c.eps_dual);
    }
    CHECK(plan.workspace.history.size() == static_cast<std::size_t>(plan.iterations));
  }

  TEST_CASE("warm start in a stationary world") {
    PlannerConfig c;
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto first = solve(c, ev, {}, {});
    REQUIRE(first.converged);
    const auto warm = shift_warm_start(first, first.basis, HorizonMode::kReceding);
    CHECK(warm.warm);
    CHECK(warm.refit_residual < 0.05);
    const EvState next = first.states[kNominal][1];
    const auto second = solve(c, next, {}, {}, &warm);
    CHECK(second.converged);
    CHECK(second.iterations <= 5);
    CHECK_FALSE(second.workspace.cold_fallback);
  }

  TEST_CASE("shrinking horizon drops one step") {
    PlannerConfig c;
    c.mode = HorizonMode::kShrinking;
    const auto ev = fixture::ev_state(0, 0, 20);
    const auto first = solve(c, ev, {}, {});
    REQUIRE(first.converged);
    const auto basis = build_basis(c.order, c.horizon - 1, (c.horizon - 1) * c.dt);
    const auto warm = shift_warm_start(first, basis, HorizonMode::kShrinking);
    CHECK(warm.lambda_theta.rows() == c.horizon - 1);
    CHECK(warm.refit_residual < 1e-6);
    CHECK_THROWS_AS(shift_warm_start(first, first.basis, HorizonMode::kShrinking), std::invalid_argument);
    PlanResult failed = first;
    failed.converged = false;
    CHECK(shift_warm_start(failed, basis, HorizonMode::kShrinking).cold_fallback);
  }

  TEST_CASE("warm start refit in a traffic scene") {
    PlannerConfig c;
    const auto in = fixture::hv_inputs(c, four_hvs());
    const auto plan = solve(c, fixture::ev_state(0, 0, 20), in.predictions, in.tubes);
    if (plan.converged) CHECK(shift_warm_start(plan, plan.basis, HorizonMode::kReceding).refit_residual < 0.05);
  }
}
