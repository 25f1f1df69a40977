#include "contplan/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace contplan {

namespace {

constexpr int kFootprintSamples = 64;
constexpr int kPlanStride = 5;
constexpr int kMinShrinkingHorizon = 10;

double heading_of(const Eigen::Vector4d& z) {
  if (std::hypot(z(2), z(3)) < 1e-6) return 0.0;
  return std::atan2(z(3), z(2));
}

std::vector<Eigen::Vector2d> footprint_boundary(const Eigen::Vector2d& c, double heading, const Footprint& f) {
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(kFootprintSamples);
  const double ch = std::cos(heading), sh = std::sin(heading);
  for (int i = 0; i < kFootprintSamples; ++i) {
    const double a = 2.0 * std::numbers::pi * i / kFootprintSamples;
    const double lx = f.semi_length * std::cos(a), ly = f.semi_width * std::sin(a);
    pts.emplace_back(c.x() + ch * lx - sh * ly, c.y() + sh * lx + ch * ly);
  }
  return pts;
}

bool inside_footprint(const Eigen::Vector2d& p, const Eigen::Vector2d& c, double heading, const Footprint& f) {
  const Eigen::Vector2d d = p - c;
  const double u = std::cos(heading) * d.x() + std::sin(heading) * d.y();
  const double v = -std::sin(heading) * d.x() + std::cos(heading) * d.y();
  return (u / f.semi_length) * (u / f.semi_length) + (v / f.semi_width) * (v / f.semi_width) < 1.0;
}

double one_way_gap(const std::vector<Eigen::Vector2d>& from, const std::vector<Eigen::Vector2d>& to,
                   const Eigen::Vector2d& c_to, double h_to, const Footprint& f_to) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : from) {
    double dist = std::numeric_limits<double>::infinity();
    for (const auto& q : to) dist = std::min(dist, (p - q).norm());
    best = std::min(best, inside_footprint(p, c_to, h_to, f_to) ? -dist : dist);
  }
  return best;
}

ReachTube pseudo_tube(const NominalPrediction& pred, const Eigen::Vector4d& z, const HvModel& model, int start_step) {
  ReachTube tube;
  tube.hv_id = pred.hv_id;
  tube.start_step = start_step;
  Eigen::Vector4d s = z;
  for (std::size_t k = 0; k < pred.centers.size(); ++k) {
    tube.state_sets.emplace_back(s, model.sigma_omega);
    tube.occupancies.push_back(pred.occupancy(static_cast<int>(k)));
    s = model.step(s, Eigen::Vector2d::Zero());
  }
  return tube;
}

// Jerk-limited ramp toward full braking along the velocity direction.
EvState braking_state(const EvState& ev, double dt, double a_max, double j_max) {
  EvState next = ev;
  const Eigen::Vector2d dir(std::cos(ev(kTheta)), std::sin(ev(kTheta)));
  const Eigen::Vector2d vel = ev(kSpeed) * dir;
  const Eigen::Vector2d acc(ev(kAx), ev(kAy));
  const double decel = std::min(a_max, std::sqrt(j_max * ev(kSpeed)));
  Eigen::Vector2d step = -decel * dir - acc;
  if (step.norm() > j_max * dt) step *= j_max * dt / step.norm();
  Eigen::Vector2d a_next = acc + step;
  Eigen::Vector2d v_next = vel + a_next * dt;
  if (v_next.dot(dir) <= 0.0) {
    v_next.setZero();
    a_next.setZero();
  }
  next.head<2>() += 0.5 * (vel + v_next) * dt;
  next(kThetaDot) = 0.0;
  next(kSpeed) = v_next.norm();
  if (next(kSpeed) > 0.1) next(kTheta) = std::atan2(v_next.y(), v_next.x());
  next(kAx) = a_next.x();
  next(kAy) = a_next.y();
  next(kJx) = (a_next.x() - acc.x()) / dt;
  next(kJy) = (a_next.y() - acc.y()) / dt;
  return next;
}

// Executed state taken from a plan at step k, heading from the velocity direction.
EvState executed_state(const PlanResult& plan, int k) {
  const auto& states = plan.states[kNominal];
  EvState s = states[static_cast<std::size_t>(std::min<int>(k, static_cast<int>(states.size()) - 1))];
  const auto kk = std::min(k, plan.basis.horizon);
  const double vx = plan.basis.vel().col(kk).dot(plan.trajectory.nominal.cx);
  const double vy = plan.basis.vel().col(kk).dot(plan.trajectory.nominal.cy);
  if (std::hypot(vx, vy) > 0.1) s(kTheta) = std::atan2(vy, vx);
  return s;
}

std::vector<PlanSample> sample_plan(const PlanResult& plan) {
  std::vector<PlanSample> out;
  for (int b = 0; b < 2; ++b) {
    const auto& states = plan.states[static_cast<std::size_t>(b)];
    for (std::size_t k = 0; k < states.size(); k += kPlanStride) {
      out.push_back({b, static_cast<int>(k), states[k](kPx), states[k](kPy), states[k](kSpeed)});
    }
  }
  return out;
}

double plan_min_speed(const PlanResult& plan) {
  double v = std::numeric_limits<double>::infinity();
  for (const auto& s : plan.states[kNominal]) v = std::min(v, s(kSpeed));
  return v;
}

}  // namespace

std::string to_string(PlannerVariant v) {
  switch (v) {
    case PlannerVariant::kProposed: return "proposed";
    case PlannerVariant::kDeterministic: return "det";
    case PlannerVariant::kWorstCase: return "worst";
  }
  return "proposed";
}

PlannerVariant parse_variant(const std::string& s) {
  if (s == "proposed") return PlannerVariant::kProposed;
  if (s == "det" || s == "deterministic_barrier") return PlannerVariant::kDeterministic;
  if (s == "worst" || s == "worst_case_barrier") return PlannerVariant::kWorstCase;
  throw std::invalid_argument("unknown planner variant '" + s + "'");
}

Eigen::Vector2d HvScript::control(double t) const {
  for (const auto& p : phases) {
    if (t >= p.t_start && t < p.t_end) {
      const double span = p.t_end - p.t_start;
      const double w = span > 0.0 ? (t - p.t_start) / span : 0.0;
      return (1.0 - w) * p.a_start + w * p.a_end;
    }
  }
  return Eigen::Vector2d::Zero();
}

int Scenario::steps() const { return static_cast<int>(std::lround(duration / planner.dt)); }

void Scenario::validate() const {
  planner.validate();
  if (!(duration > 0.0)) throw std::invalid_argument("scenario duration must be positive");
  const double ratio = duration / planner.dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-6) throw std::invalid_argument("scenario duration must be a multiple of dt");
  if (!ev_init.allFinite()) throw std::invalid_argument("scenario ev_init is not finite");
  if (!(y_min < y_max)) throw std::invalid_argument("scenario corridor bounds are inverted");
  if ((noise.sigma_bar.array() < 0.0).any()) throw std::invalid_argument("noise sigma_bar must be non-negative");
  if (!(safety_semi_axes.array() > 0.0).all()) throw std::invalid_argument("safety semi-axes must be positive");
  if (!(intent_seed.array() > 0.0).all()) throw std::invalid_argument("intent seed must be positive");
  if (!(worst_case_bound > 0.0)) throw std::invalid_argument("worst_case_bound must be positive");
  if (intent_window_steps < 1) throw std::invalid_argument("intent_window_steps must be >= 1");
  if (!(sigma_omega_scale > 0.0)) throw std::invalid_argument("sigma_omega_scale must be positive");
  for (const auto* f : {&ev_footprint, &hv_footprint}) {
    if (!(f->semi_length > 0.0 && f->semi_width > 0.0)) throw std::invalid_argument("footprint axes must be positive");
  }
  for (const auto& hv : hvs) {
    for (const auto& p : hv.phases) {
      if (!(p.t_end >= p.t_start)) throw std::invalid_argument("HV " + std::to_string(hv.id) + ": phase ends before it starts");
      for (const auto& a : {p.a_start, p.a_end}) {
        if ((a.array() < box.lower.array() - 1e-12).any() || (a.array() > box.upper.array() + 1e-12).any())
          throw std::invalid_argument("HV " + std::to_string(hv.id) + ": scripted control outside the admissible box");
      }
    }
  }
  if (headway) {
    if (headway->hv_index < 0 || headway->hv_index >= static_cast<int>(hvs.size()))
      throw std::invalid_argument("headway hv_index out of range");
    if (!(headway->headway >= 0.0)) throw std::invalid_argument("headway must be non-negative");
  }
}

std::vector<Eigen::Vector4d> Scenario::initial_hv_states() const {
  std::vector<Eigen::Vector4d> out;
  for (const auto& hv : hvs) out.push_back(hv.init);
  if (headway) {
    auto& z = out[static_cast<std::size_t>(headway->hv_index)];
    z(0) = ev_init(kPx) + headway->offset + headway->headway * headway->closing_speed;
  }
  return out;
}

Eigen::Vector4d hv_step(const HvModel& model, const Eigen::Vector4d& z, const Eigen::Vector2d& u) {
  return model.step(z, u);
}

Eigen::Vector4d noise_sigma(const NoiseParams& noise, double range) {
  return noise.sigma_bar / std::max(10.0 / (range + 0.1), 1.0);
}

Eigen::Vector4d measure(const Eigen::Vector4d& z_true, const NoiseParams& noise, const Eigen::Vector2d& ev_position,
                        std::mt19937_64& rng) {
  const Eigen::Vector4d sigma = noise_sigma(noise, (z_true.head<2>() - ev_position).norm());
  Eigen::Vector4d z = z_true;
  std::normal_distribution<double> n01(0.0, 1.0);
  for (int i = 0; i < 4; ++i) {
    const double e = n01(rng);
    z(i) += sigma(i) * e;
  }
  return z;
}

double footprint_gap(const Eigen::Vector2d& ca, double heading_a, const Footprint& fa, const Eigen::Vector2d& cb,
                     double heading_b, const Footprint& fb) {
  const auto pa = footprint_boundary(ca, heading_a, fa);
  const auto pb = footprint_boundary(cb, heading_b, fb);
  return std::min(one_way_gap(pa, pb, cb, heading_b, fb), one_way_gap(pb, pa, ca, heading_a, fa));
}

HvModel hv_model(const Scenario& s) {
  const Eigen::Vector4d var = (s.sigma_omega_scale * s.noise.sigma_bar).array().square().max(kEpsPd * 10.0);
  return HvModel::double_integrator(s.planner.dt, var.asDiagonal().toDenseMatrix(),
                                    AxisAlignedEllipse(Eigen::Vector2d::Zero(), s.safety_semi_axes));
}

RunResult run_closed_loop(const Scenario& scenario, const std::string& run_id, std::ostream* residual_log) {
  scenario.validate();
  RunResult run;
  run.run_id = run_id;
  run.scenario = scenario;

  const HvModel model = hv_model(scenario);
  const double dt = scenario.planner.dt;
  const int m = static_cast<int>(scenario.hvs.size());
  const int window = scenario.intent_window_steps;
  std::seed_seq seq{static_cast<std::uint32_t>(scenario.seed & 0xffffffffu), static_cast<std::uint32_t>(scenario.seed >> 32)};
  std::mt19937_64 rng(seq);

  PlannerConfig base = scenario.planner;
  base.y_min = scenario.y_min;
  base.y_max = scenario.y_max;

  std::vector<Eigen::Vector4d> truth = scenario.initial_hv_states();
  std::vector<std::vector<Eigen::Vector4d>> measured(static_cast<std::size_t>(m));
  std::vector<ControlIntentState> intents;
  for (const auto& hv : scenario.hvs) {
    if (scenario.variant == PlannerVariant::kWorstCase) {
      intents.push_back(init_intent(hv.id, scenario.worst_case_bound, scenario.worst_case_bound));
    } else {
      intents.push_back(init_intent(hv.id, scenario.intent_seed.x(), scenario.intent_seed.y()));
    }
  }

  EvState ev = scenario.ev_init;
  double odometer = 0.0;
  std::optional<PlanResult> last_good;
  int last_good_offset = 0;
  int failures = 0;
  std::optional<AdmmWorkspace> warm;

  const int steps = scenario.steps();
  for (int i = 0; i < steps; ++i) {
    PlannerConfig config = base;
    if (config.mode == HorizonMode::kShrinking) {
      config.horizon = std::max(std::min(kMinShrinkingHorizon, base.horizon), base.horizon - i);
      config.consensus_steps = std::min(config.consensus_steps, config.horizon);
    }
    const Eigen::Vector2d ev_pos(ev(kPx), ev(kPy));

    std::vector<HvTrace> hv_rows(static_cast<std::size_t>(m));
    std::vector<NominalPrediction> predictions;
    std::vector<ReachTube> tubes;
    for (int h = 0; h < m; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      const Eigen::Vector4d z = measure(truth[hi], scenario.noise, ev_pos, rng);
      measured[hi].push_back(z);
      bool triggered = false;
      if (scenario.variant != PlannerVariant::kWorstCase && i >= window) {
        const Eigen::Vector2d u =
            infer_control(measured[hi][static_cast<std::size_t>(i - window)], z, dt * window, scenario.box);
        ObserveResult obs = observe(std::move(intents[hi]), u, i);
        intents[hi] = std::move(obs.state);
        triggered = obs.triggered;
      }
      hv_rows[hi].measured = z;
      hv_rows[hi].volume = volume(intents[hi].ellipsoid);
      hv_rows[hi].triggered = triggered;

      const int id = scenario.hvs[hi].id;
      predictions.push_back(predict_constant_velocity(model, z, config.horizon, id));
      if (scenario.variant == PlannerVariant::kDeterministic) {
        tubes.push_back(pseudo_tube(predictions.back(), z, model, i));
      } else {
        tubes.push_back(propagate_frs(model, z, intents[hi].ellipsoid, config.horizon, id, i));
      }
    }

    TraceRecord rec;
    rec.step = i + 1;
    rec.t = (i + 1) * dt;
    PlanResult plan;
    try {
      const AdmmWorkspace* w = warm ? &*warm : nullptr;
      if (residual_log != nullptr) *residual_log << "# step " << i << '\n';
      SolveOptions opts;
      opts.residual_log = residual_log;
      plan = solve(config, ev, predictions, tubes, w, opts);
    } catch (const std::exception& e) {
      run.aborted = true;
      run.abort_reason = "step " + std::to_string(i) + ": " + e.what();
      break;
    }
    rec.iterations = plan.iterations;
    rec.residual = plan.final_residual;
    rec.converged = plan.converged;
    rec.solve_time = plan.solve_time.count();
    rec.min_planned_speed = plan.converged ? plan_min_speed(plan) : std::numeric_limits<double>::quiet_NaN();
    rec.plan = sample_plan(plan);

    EvState next;
    if (plan.converged) {
      failures = 0;
      next = executed_state(plan, 1);
      last_good = plan;
      last_good_offset = 1;
      HorizonMode mode = config.mode;
      int next_horizon = config.horizon;
      if (mode == HorizonMode::kShrinking) {
        next_horizon = std::max(std::min(kMinShrinkingHorizon, base.horizon), base.horizon - i - 1);
        if (next_horizon == config.horizon) mode = HorizonMode::kReceding;
      }
      const BernsteinBasis basis = build_basis(config.order, next_horizon, next_horizon * dt);
      warm = shift_warm_start(plan, basis, mode);
    } else {
      ++failures;
      warm.reset();
      if (failures == 1 && last_good && last_good_offset + 1 <= last_good->basis.horizon) {
        ++last_good_offset;
        next = executed_state(*last_good, last_good_offset);
        rec.fallback = Fallback::kShiftedPlan;
      } else {
        next = braking_state(ev, dt, config.a_max, config.j_max);
        rec.fallback = Fallback::kBraking;
      }
    }
    odometer += std::hypot(next(kPx) - ev(kPx), next(kPy) - ev(kPy));
    ev = next;
    rec.ev = ev;
    rec.odometer = odometer;

    const double t = i * dt;
    for (int h = 0; h < m; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      truth[hi] = hv_step(model, truth[hi], scenario.hvs[hi].control(t));
      hv_rows[hi].truth = truth[hi];
      hv_rows[hi].d_min = footprint_gap(Eigen::Vector2d(ev(kPx), ev(kPy)), ev(kTheta), scenario.ev_footprint,
                                        truth[hi].head<2>(), heading_of(truth[hi]), scenario.hv_footprint);
      if (hv_rows[hi].d_min < 0.0) rec.collision = true;
    }
    rec.hvs = std::move(hv_rows);
    run.records.push_back(std::move(rec));
    if (run.records.back().collision) {
      run.collided = true;
      break;
    }
  }
  return run;
}

RunMetrics compute_run_metrics(const RunResult& run) {
  RunMetrics r;
  r.run_id = run.run_id;
  r.collided = run.collided;
  r.aborted = run.aborted;
  r.steps = static_cast<int>(run.records.size());
  if (run.records.empty()) return r;
  r.d_min = std::numeric_limits<double>::infinity();
  r.min_planned_speed = std::numeric_limits<double>::infinity();
  double v_sum = 0.0, t_sum = 0.0;
  for (const auto& rec : run.records) {
    for (const auto& h : rec.hvs) r.d_min = std::min(r.d_min, h.d_min);
    r.jx_max = std::max(r.jx_max, std::abs(rec.ev(kJx)));
    r.jy_max = std::max(r.jy_max, std::abs(rec.ev(kJy)));
    if (std::isfinite(rec.min_planned_speed)) r.min_planned_speed = std::min(r.min_planned_speed, rec.min_planned_speed);
    v_sum += rec.ev(kSpeed);
    t_sum += rec.solve_time;
  }
  if (!std::isfinite(r.d_min)) r.d_min = 0.0;
  if (!std::isfinite(r.min_planned_speed)) r.min_planned_speed = 0.0;
  r.v_mean = v_sum / static_cast<double>(run.records.size());
  r.t_mean = t_sum / static_cast<double>(run.records.size());
  r.s = run.records.back().odometer;
  return r;
}

MetricsReport compute_metrics(const std::vector<RunResult>& runs) {
  if (runs.empty()) throw std::invalid_argument("compute_metrics: no runs");
  MetricsReport out;
  out.d_min = std::numeric_limits<double>::infinity();
  out.min_planned_speed = std::numeric_limits<double>::infinity();
  int collided = 0;
  double v = 0.0, s = 0.0, t = 0.0;
  for (const auto& run : runs) {
    RunMetrics r = compute_run_metrics(run);
    collided += r.collided ? 1 : 0;
    out.d_min = std::min(out.d_min, r.d_min);
    out.jx_max = std::max(out.jx_max, r.jx_max);
    out.jy_max = std::max(out.jy_max, r.jy_max);
    out.min_planned_speed = std::min(out.min_planned_speed, r.min_planned_speed);
    v += r.v_mean;
    s += r.s;
    t += r.t_mean;
    out.runs.push_back(std::move(r));
  }
  const double n = static_cast<double>(runs.size());
  out.p_c = collided / n;
  out.v_mean = v / n;
  out.s_mean = s / n;
  out.t_mean = t / n;
  return out;
}

}  // namespace contplan
