#pragma once

#include "contplan/intent.hpp"
#include "contplan/planner.hpp"
#include "contplan/reach.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace contplan {

enum class PlannerVariant { kProposed, kDeterministic, kWorstCase };

std::string to_string(PlannerVariant v);
/// Accepts proposed | det | deterministic_barrier | worst | worst_case_barrier.
PlannerVariant parse_variant(const std::string& s);

/// Acceleration ramp from a_start at t_start to a_end at t_end (piecewise constant when equal).
struct HvPhase {
  double t_start = 0.0;
  double t_end = 0.0;
  Eigen::Vector2d a_start = Eigen::Vector2d::Zero();
  Eigen::Vector2d a_end = Eigen::Vector2d::Zero();
};

struct HvScript {
  int id = 0;
  std::string label;
  Eigen::Vector4d init = Eigen::Vector4d::Zero();  ///< (px, py, vx, vy)
  std::vector<HvPhase> phases;

  /// Scripted control at time t; zero outside every phase, first matching phase wins.
  Eigen::Vector2d control(double t) const;
};

struct NoiseParams {
  Eigen::Vector4d sigma_bar = Eigen::Vector4d(0.2, 0.2, 0.1, 0.1);
};

struct Footprint {
  double semi_length = 2.4;
  double semi_width = 1.0;
};

/// Places one HV at ev.x + offset + headway * closing_speed, keeping its lateral state.
struct HeadwaySpec {
  int hv_index = 0;
  double headway = 5.0;        ///< s
  double closing_speed = 6.0;  ///< m/s
  double offset = 0.0;         ///< m
};

struct Scenario {
  std::string name = "unnamed";
  double duration = 10.0;
  EvState ev_init = EvState::Zero();
  double y_min = -1.0e6;
  double y_max = 1.0e6;
  std::vector<HvScript> hvs;
  NoiseParams noise;
  PlannerVariant variant = PlannerVariant::kProposed;
  std::uint64_t seed = 1;
  std::optional<HeadwaySpec> headway;

  Eigen::Vector2d safety_semi_axes = Eigen::Vector2d(5.5, 2.2);  ///< planning geometry around each HV
  Footprint ev_footprint;
  Footprint hv_footprint;
  Eigen::Vector2d intent_seed = Eigen::Vector2d(0.2, 0.1);
  double worst_case_bound = 3.0;
  AdmissibleBox box;
  int intent_window_steps = 12;
  double sigma_omega_scale = 3.0;  ///< Sigma_omega = diag((scale * sigma_bar)^2)

  PlannerConfig planner;

  int steps() const;
  /// Throws std::invalid_argument on inconsistent fields or out-of-box scripts.
  void validate() const;
  /// HV initial states after applying the headway placement.
  std::vector<Eigen::Vector4d> initial_hv_states() const;
};

struct HvTrace {
  Eigen::Vector4d truth = Eigen::Vector4d::Zero();     ///< at the record time t
  Eigen::Vector4d measured = Eigen::Vector4d::Zero();  ///< observation planned against, taken at t - dt
  double volume = 0.0;
  bool triggered = false;
  double d_min = 0.0;  ///< signed footprint gap, negative when overlapping
};

struct PlanSample {
  int branch = 0;
  int k = 0;
  double px = 0.0;
  double py = 0.0;
  double v = 0.0;
};

enum class Fallback : int { kNone = 0, kShiftedPlan = 1, kBraking = 2 };

struct TraceRecord {
  int step = 0;
  double t = 0.0;  ///< time of the executed state
  EvState ev = EvState::Zero();
  double odometer = 0.0;
  std::vector<HvTrace> hvs;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  Fallback fallback = Fallback::kNone;
  double solve_time = 0.0;  ///< s
  bool collision = false;
  double min_planned_speed = 0.0;  ///< nominal branch of this cycle's plan, NaN when it did not converge
  std::vector<PlanSample> plan;    ///< every 5th step of both branches
};

struct RunResult {
  std::string run_id;
  Scenario scenario;
  std::vector<TraceRecord> records;
  bool collided = false;
  bool aborted = false;
  std::string abort_reason;
};

struct RunMetrics {
  std::string run_id;
  bool collided = false;
  bool aborted = false;
  double d_min = 0.0;
  double jx_max = 0.0;
  double jy_max = 0.0;
  double v_mean = 0.0;
  double s = 0.0;
  double t_mean = 0.0;
  double min_planned_speed = 0.0;
  int steps = 0;
};

struct MetricsReport {
  double p_c = 0.0;
  double d_min = 0.0;
  double jx_max = 0.0;
  double jy_max = 0.0;
  double v_mean = 0.0;
  double s_mean = 0.0;
  double t_mean = 0.0;
  double min_planned_speed = 0.0;
  std::vector<RunMetrics> runs;
};

Eigen::Vector4d hv_step(const HvModel& model, const Eigen::Vector4d& z, const Eigen::Vector2d& u);

/// Distance-dependent standard deviations sigma_bar / max(10 / (s + 0.1), 1).
Eigen::Vector4d noise_sigma(const NoiseParams& noise, double range);

Eigen::Vector4d measure(const Eigen::Vector4d& z_true, const NoiseParams& noise, const Eigen::Vector2d& ev_position,
                        std::mt19937_64& rng);

/// Signed gap between two heading-oriented elliptical footprints, from 64 boundary samples each way.
double footprint_gap(const Eigen::Vector2d& ca, double heading_a, const Footprint& fa, const Eigen::Vector2d& cb,
                     double heading_b, const Footprint& fb);

HvModel hv_model(const Scenario& s);

RunResult run_closed_loop(const Scenario& scenario, const std::string& run_id = "run",
                          std::ostream* residual_log = nullptr);

RunMetrics compute_run_metrics(const RunResult& run);
MetricsReport compute_metrics(const std::vector<RunResult>& runs);

}  // namespace contplan
