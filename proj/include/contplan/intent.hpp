#pragma once

#include "contplan/ellipsoid.hpp"

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace contplan {

/// Physically admissible HV accelerations (worst-case box).
struct AdmissibleBox {
  Eigen::Vector2d lower{-3.0, -3.0};
  Eigen::Vector2d upper{3.0, 3.0};

  AdmissibleBox() = default;
  AdmissibleBox(Eigen::Vector2d lo, Eigen::Vector2d hi);
  static AdmissibleBox symmetric(double ax, double ay);

  Eigen::Vector2d clamp(const Eigen::Vector2d& u) const;
  bool contains(const Ellipsoid& e) const;
};

struct VolumeSample {
  int step = 0;
  double volume = 0.0;
};

/// Learned control-intent set of one HV plus its sample history.
struct ControlIntentState {
  int hv_id = 0;
  Ellipsoid ellipsoid = Ellipsoid::ball(Eigen::Vector2d::Zero(), 1.0);
  std::vector<Eigen::Vector2d> samples;
  int last_update_step = 0;
  int update_count = 0;
  std::vector<VolumeSample> volume_history;
};

inline constexpr std::size_t kMaxIntentSamples = 4096;
inline constexpr double kTriggerTolerance = 1e-12;

/// Axis-aligned seed set with semi-axes (ax_bound, ay_bound) centered at zero.
ControlIntentState init_intent(int hv_id, double ax_bound, double ay_bound);

/// Acceleration implied by two velocity observations dt apart, clamped to `box`.
Eigen::Vector2d infer_control(const Eigen::Vector4d& z_prev, const Eigen::Vector4d& z_curr, double dt,
                              const AdmissibleBox& box = {});

struct ObserveResult {
  ControlIntentState state;
  bool triggered = false;
};

/// Records u and grows the intent set when u falls on or outside its boundary.
ObserveResult observe(ControlIntentState state, const Eigen::Vector2d& u, int step);

}  // namespace contplan
