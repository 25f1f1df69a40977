// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status 1 if any failed.

#include "contplan/cli.hpp"
#include "contplan/scenario_io.hpp"
#include "contplan/sim.hpp"
#include "contplan/trace_io.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>

using namespace contplan;
using Eigen::Matrix2d;
using Eigen::Matrix4d;
using Eigen::MatrixXd;
using Eigen::Vector2d;
using Eigen::Vector4d;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Scenario load(const std::string& name) { return load_scenario(fs::path(CONTPLAN_SCENARIO_DIR) / (name + ".json")); }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("contplan_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool inside(const AxisAlignedEllipse& occ, const Vector2d& p) {
  return (p - occ.center).cwiseQuotient(occ.semi_axes).squaredNorm() <= 1.0 + 1e-9;
}

Outcome containment() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> noise(1e-4, 0.05), speed(0.0, 25.0), lat(-1.0, 1.0);
  long rollouts = 0, violations = 0;
  for (int cfg = 0; cfg < 20; ++cfg) {
    const auto m = fixture::hv_model(0.08, noise(rng));
    const Ellipsoid intent(Vector2d(0.3 * lat(rng), 0.2 * lat(rng)), oracle::random_spd(2, 0.01, 1.0, rng));
    const Vector4d z(0, 3.7 * lat(rng), speed(rng), lat(rng));
    const auto tube = propagate_frs(m, z, intent, 50);
    const auto footprint = m.geometry.as_ellipsoid().shape();
    for (int r = 0; r < 500; ++r, ++rollouts) {
      Vector4d x = oracle::sample_inside(z, m.sigma_omega, rng);
      bool bad = false;
      for (int k = 0; k <= 50 && !bad; ++k) {
        for (const auto& p : Ellipsoid(x.head<2>(), footprint).boundary_samples(16))
          if (!inside(tube.occupancy(k), p)) bad = true;
        x = m.step(x, oracle::sample_inside(intent.center(), intent.shape(), rng));
      }
      violations += bad;
    }
  }
  const double t = seconds_since(t0);
  return {violations == 0 && t < 60.0,
          std::to_string(rollouts) + " rollouts, " + std::to_string(violations) + " violations, " + fmt("%.1f s", t)};
}

Outcome nesting() {
  const auto m = fixture::hv_model(0.08, 1e-8);
  auto state = init_intent(1, 0.2, 0.1);
  std::mt19937_64 rng(9);
  Vector4d z(0, 0, 12, 0);
  auto tube = propagate_frs(m, z, state.ellipsoid, 50, 1, 0);
  int failures = 0, triggers = 0;
  for (int i = 0; i < 200; ++i) {
    // controls strictly inside the current intent set
    const Vector2d u = state.ellipsoid.center() +
                       0.9 * (oracle::sample_inside(Vector2d::Zero(), state.ellipsoid.shape(), rng)).head<2>();
    const Vector4d next = m.step(z, u);
    const auto obs = observe(state, infer_control(z, next, m.dt), i + 1);
    triggers += obs.triggered;
    state = obs.state;
    const auto next_tube = propagate_frs(m, next, state.ellipsoid, 50, 1, i + 1);
    if (!one_step_nesting_check(tube, next_tube, 1e-6)) ++failures;
    tube = next_tube;
    z = next;
  }
  return {failures == 0 && triggers == 0,
          "200 steps, " + std::to_string(failures) + " nesting failures, " + std::to_string(triggers) + " triggers"};
}

Outcome mvee_correctness() {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> g;
  std::uniform_int_distribution<int> count(3, 8);
  double worst_set = 0.0, worst_point = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::vector<Vector2d> pts;
    const int n = count(rng);
    const double sx = 0.5 + 2.0 * std::abs(g(rng)), sy = 0.5 + std::abs(g(rng));
    for (int i = 0; i < n; ++i) pts.emplace_back(sx * g(rng), sy * g(rng));
    const double ref = oracle::grid_mvee_area(pts);
    worst_set = std::max(worst_set, std::abs(volume(mvee(pts)) - ref) / ref);
  }
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  int cases = 0;
  while (cases < 50) {
    const Ellipsoid e(Vector2d(u(rng) / 2, u(rng) / 2), oracle::random_spd(2, 0.2, 3.0, rng));
    const Vector2d p(u(rng), u(rng));
    if (mahalanobis(e, p) <= 1.0) continue;
    auto pts = e.boundary_samples(720);
    pts.push_back(p);
    const auto [c, s] = oracle::khachiyan(pts);
    worst_point = std::max(worst_point, std::abs(volume(enclose_point(e, p)) - oracle::area(s)) / oracle::area(s));
    ++cases;
  }
  return {worst_set <= 1e-3 && worst_point <= 1e-3,
          "max rel. error " + fmt("%.2e", worst_set) + " (point sets), " + fmt("%.2e", worst_point) + " (enclose_point)"};
}

Outcome barrier_invariance() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> d0(1.0, 100.0), a(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 200);
  long below = 0, steps = 0;
  for (int s = 0; s < 100000; ++s) {
    double alpha = a(rng);
    if (alpha == 0.0) alpha = 1.0;
    double d = (s % 10 == 0) ? 1.0 : d0(rng);
    for (int k = len(rng); k > 0; --k, ++steps) {
      d = min_feasible_d(d, alpha);
      if (d < 1.0) ++below;
    }
  }
  return {below == 0, "1e5 sequences, " + std::to_string(steps) + " steps, " + std::to_string(below) + " below 1"};
}

Outcome solver_sanity() {
  PlannerConfig c;
  c.a_max = 1e3;
  c.j_max = 1e3;
  c.eps_pri = 1e-6;
  c.eps_consensus = 1e-6;
  c.eps_dual = 1e-7;
  c.iter_max = 4000;
  const auto plan = solve(c, fixture::ev_state(0, 0, 17), {}, {});
  const VectorXd ref = fixture::tracking_qp_positions(c, 0.0, 17.0, 0.0, c.nominal, c.v_xd);
  double err = 0.0;
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k <= c.horizon; ++k)
      err = std::max({err, std::abs(plan.states[b][k](kPx) - ref(k)), std::abs(plan.states[b][k](kPy))});

  PlannerConfig d;
  const auto in = fixture::hv_inputs(d, {Vector4d(40, 0, 12, 0), Vector4d(20, 3.7, 18, 0), Vector4d(-15, 3.7, 22, 0),
                                         Vector4d(70, -3.7, 15, 0)});
  const auto ev = fixture::ev_state(0, 0.3, 19, 0.02);
  const auto pd = assemble(d, ev, in.predictions, in.tubes);
  auto ws = cold_start(pd, ev);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  int ascents = 0;
  auto tol = [](double v) { return 1e-8 * std::max(1.0, std::abs(v)); };
  for (int it = 0; it < 100; ++it) {
    for (auto* lam : {&ws.lambda_x, &ws.lambda_y})
      for (Eigen::Index i = 0; i < lam->size(); ++i) lam->data()[i] += 0.1 * g(rng);
    double before[2];
    for (int b = 0; b < 2; ++b) before[b] = block_objective(ws, pd, kThetaBlock, b);
    update_theta(ws, pd);
    for (int b = 0; b < 2; ++b)
      if (block_objective(ws, pd, kThetaBlock, b) > before[b] + tol(before[b])) ++ascents;
    double bx[2], by[2];
    for (int b = 0; b < 2; ++b) {
      bx[b] = block_objective(ws, pd, kXBlock, b);
      by[b] = block_objective(ws, pd, kYBlock, b);
    }
    update_positions(ws, pd);
    for (int b = 0; b < 2; ++b) {
      if (block_objective(ws, pd, kXBlock, b) > bx[b] + tol(bx[b])) ++ascents;
      if (block_objective(ws, pd, kYBlock, b) > by[b] + tol(by[b])) ++ascents;
    }
    update_slack_polar(ws, pd);
    update_consensus_duals(ws, pd);
  }
  return {plan.converged && err <= 1e-3 && ascents == 0,
          "QP position error " + fmt("%.2e m", err) + ", " + std::to_string(ascents) + " block ascents in 100 iterations"};
}

Outcome consensus() {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> x(-20.0, 80.0), v(5.0, 25.0);
  std::uniform_int_distribution<int> lane(-1, 1);
  PlannerConfig c;
  int converged = 0;
  double gap = 0.0, mean = 0.0;
  for (int t = 0; t < 20; ++t) {
    std::vector<Vector4d> hvs;
    for (int h = 0; h < 4; ++h) {
      Vector4d z(x(rng), 3.7 * lane(rng), v(rng), 0);
      if (std::abs(z(0)) < 12.0 && z(1) == 0.0) z(0) += 30.0;
      hvs.push_back(z);
    }
    const auto in = fixture::hv_inputs(c, hvs);
    const auto plan = solve(c, fixture::ev_state(0, 0, v(rng)), in.predictions, in.tubes);
    if (!plan.converged) continue;
    ++converged;
    for (int k = 1; k <= c.consensus_steps; ++k) {
      const auto& a = plan.states[kNominal][k];
      const auto& s = plan.states[kContingency][k];
      gap = std::max(gap, std::hypot(a(kPx) - s(kPx), a(kPy) - s(kPy)));
    }
    const auto& w = plan.workspace;
    mean = std::max({mean, (w.lambda_cx.col(0) + w.lambda_cx.col(1)).cwiseAbs().maxCoeff(),
                     (w.lambda_cy.col(0) + w.lambda_cy.col(1)).cwiseAbs().maxCoeff(),
                     (w.lambda_ctheta.col(0) + w.lambda_ctheta.col(1)).cwiseAbs().maxCoeff()});
  }
  return {converged > 0 && gap <= 0.05 && mean <= 1e-9,
          std::to_string(converged) + "/20 converged, max branch gap " + fmt("%.4f m", gap) + ", dual mean " +
              fmt("%.1e", mean)};
}

Outcome cutin_sweep() {
  const fs::path out = scratch("cutin");
  RunConfig cfg;
  cfg.scenario = fs::path(CONTPLAN_SCENARIO_DIR) / "cutin.json";
  cfg.variants = {PlannerVariant::kProposed, PlannerVariant::kDeterministic, PlannerVariant::kWorstCase};
  cfg.sweeps.push_back(parse_sweep("headway=4.5:5.5:0.1"));
  cfg.repeat = 3;
  cfg.out = out;
  cfg.threads = 1;
  std::ostringstream log, err;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = run_batch(cfg, log, err);
  const double t = seconds_since(t0);
  std::ifstream mf(out / "metrics.json");
  const auto mj = nlohmann::json::parse(mf);
  std::map<std::string, MetricsReport> m;
  for (const auto& [label, group] : mj["variants"].items()) m[label] = metrics_from_json(group);
  const auto& p = m["proposed"];
  const auto& d = m["det"];
  const auto& w = m["worst"];
  const bool ok = code == kExitOk && p.runs.size() == 33 && p.p_c == 0.0 && d.p_c > 0.0 && w.p_c == 0.0 &&
                  w.d_min > p.d_min && p.d_min > 0.0 && t < 600.0;
  return {ok, "P_c proposed/det/worst " + fmt("%.2f", 100 * p.p_c) + "/" + fmt("%.2f", 100 * d.p_c) + "/" +
                  fmt("%.2f %%", 100 * w.p_c) + ", d_min proposed " + fmt("%.2f m", p.d_min) + ", worst " +
                  fmt("%.2f m", w.d_min) + ", " + std::to_string(p.runs.size() + d.runs.size() + w.runs.size()) +
                  " runs in " + fmt("%.0f s", t)};
}

struct IntersectionRuns {
  RunMetrics proposed, worst;
};

IntersectionRuns intersection_runs() {
  static std::optional<IntersectionRuns> cached;
  if (!cached) {
    Scenario s = load("intersection");
    IntersectionRuns r;
    s.variant = PlannerVariant::kProposed;
    r.proposed = compute_run_metrics(run_closed_loop(s, "proposed"));
    s.variant = PlannerVariant::kWorstCase;
    r.worst = compute_run_metrics(run_closed_loop(s, "worst"));
    cached = r;
  }
  return *cached;
}

Outcome intersection() {
  const auto r = intersection_runs();
  return {!r.proposed.collided && !r.proposed.aborted && r.proposed.s > r.worst.s,
          std::string(r.proposed.collided ? "collision" : "no collision") + ", travel proposed " +
              fmt("%.1f m", r.proposed.s) + " vs worst " + fmt("%.1f m", r.worst.s)};
}

Outcome performance() {
  const double t = intersection_runs().proposed.t_mean;
  const bool ok = t <= 0.050;
  return {ok, "t_mean " + fmt("%.1f ms", 1e3 * t) + " (M=4, N=50, n=10, one core)" +
                  (t > 0.150 ? ", above hard limit" : "")};
}

Outcome parameter_study() {
  const Scenario base = load("intersection");
  const double ns[3] = {5, 10, 20}, ps[3] = {0.2, 0.5, 0.8};
  // three repeats per cell, seeds 1..3
  double grid[3][3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        Scenario s = base;
        apply_override(s, "N_s", ns[i]);
        apply_override(s, "p_s", ps[j]);
        s.seed = seed;
        grid[i][j] += compute_run_metrics(run_closed_loop(s, "study")).min_planned_speed / 3.0;
      }
  double by_ns[3] = {0, 0, 0}, by_ps[3] = {0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      by_ns[i] += grid[i][j] / 3.0;
      by_ps[j] += grid[i][j] / 3.0;
    }
  const bool ok = by_ns[0] > by_ns[1] && by_ns[1] > by_ns[2] && by_ps[0] > by_ps[1] && by_ps[1] > by_ps[2];
  return {ok, "mean min planned speed over N_s 5/10/20: " + fmt("%.2f", by_ns[0]) + "/" + fmt("%.2f", by_ns[1]) + "/" +
                  fmt("%.2f", by_ns[2]) + ", over p_s 0.2/0.5/0.8: " + fmt("%.2f", by_ps[0]) + "/" +
                  fmt("%.2f", by_ps[1]) + "/" + fmt("%.2f m/s", by_ps[2])};
}

std::string body(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("#", 0) != 0) out += line + "\n";
  return out;
}

Outcome determinism() {
  Scenario s = load("cutin");
  s.headway->headway = 4.8;
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  write_run(a, run_closed_loop(s, "same"));
  write_run(b, run_closed_loop(s, "same"));
  const std::string ta = body(a / "trace_same.csv"), tb = body(b / "trace_same.csv");
  const std::string pa = body(a / "plan_same.csv"), pb = body(b / "plan_same.csv");
  return {!ta.empty() && ta == tb && pa == pb, std::to_string(ta.size()) + " trace bytes compared"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"containment", containment},         {"one-step nesting", nesting},   {"mvee correctness", mvee_correctness},
      {"barrier invariance", barrier_invariance}, {"solver sanity", solver_sanity}, {"consensus", consensus},
      {"cut-in sweep", cutin_sweep},        {"intersection", intersection}, {"performance", performance},
      {"parameter study", parameter_study}, {"determinism", determinism},
  };
  int failed = 0, index = 0;
  for (const auto& c : criteria) {
    ++index;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << index << " " << c.name << ": " << (o.pass ? "PASS" : "FAIL") << " (" << o.detail << ")"
              << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
