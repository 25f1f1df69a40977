#include "contplan/intent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace contplan {

AdmissibleBox::AdmissibleBox(Eigen::Vector2d lo, Eigen::Vector2d hi) : lower(lo), upper(hi) {
  if (!(lo.x() < hi.x() && lo.y() < hi.y())) throw std::invalid_argument("admissible box: lower must be < upper");
}

AdmissibleBox AdmissibleBox::symmetric(double ax, double ay) {
  return {Eigen::Vector2d(-ax, -ay), Eigen::Vector2d(ax, ay)};
}

Eigen::Vector2d AdmissibleBox::clamp(const Eigen::Vector2d& u) const { return u.cwiseMax(lower).cwiseMin(upper); }

bool AdmissibleBox::contains(const Ellipsoid& e) const {
  // Support function of the ellipse along the coordinate axes.
  const Eigen::Vector2d half(std::sqrt(e.shape()(0, 0)), std::sqrt(e.shape()(1, 1)));
  const Eigen::Vector2d c = e.center();
  return ((c - half).array() >= lower.array() - 1e-12).all() && ((c + half).array() <= upper.array() + 1e-12).all();
}

ControlIntentState init_intent(int hv_id, double ax_bound, double ay_bound) {
  if (!(ax_bound > 0.0 && ay_bound > 0.0)) throw std::invalid_argument("init_intent: bounds must be positive");
  ControlIntentState s;
  s.hv_id = hv_id;
  s.ellipsoid = Ellipsoid(Eigen::Vector2d::Zero(), Eigen::Vector2d(ax_bound * ax_bound, ay_bound * ay_bound)
                                                        .asDiagonal()
                                                        .toDenseMatrix());
  s.samples = {{ax_bound, 0.0}, {-ax_bound, 0.0}, {0.0, ay_bound}, {0.0, -ay_bound}};
  s.volume_history.push_back({0, volume(s.ellipsoid)});
  return s;
}

Eigen::Vector2d infer_control(const Eigen::Vector4d& z_prev, const Eigen::Vector4d& z_curr, double dt,
                              const AdmissibleBox& box) {
  if (!(dt > 0.0)) throw std::invalid_argument("infer_control: dt must be positive");
  const Eigen::Vector2d u = (z_curr.tail<2>() - z_prev.tail<2>()) / dt;
  return box.clamp(u);
}

namespace {

// Keeps the history bounded: drops the most interior non-seed sample.
void cap_samples(ControlIntentState& s) {
  if (s.samples.size() <= kMaxIntentSamples) return;
  constexpr std::size_t kSeeds = 4;
  auto first = s.samples.begin() + static_cast<std::ptrdiff_t>(kSeeds);
  auto victim = std::min_element(first, s.samples.end(), [&](const auto& a, const auto& b) {
    return mahalanobis(s.ellipsoid, a) < mahalanobis(s.ellipsoid, b);
  });
  s.samples.erase(victim);
}

}  // namespace

ObserveResult observe(ControlIntentState state, const Eigen::Vector2d& u, int step) {
  if (!u.allFinite()) throw std::invalid_argument("observe: non-finite control");
  state.samples.push_back(u);
  const bool triggered = mahalanobis(state.ellipsoid, u) >= 1.0 - kTriggerTolerance;
  if (triggered) {
    state.ellipsoid = enclose_point(state.ellipsoid, u);
    state.last_update_step = step;
    ++state.update_count;
    state.volume_history.push_back({step, volume(state.ellipsoid)});
  }
  cap_samples(state);
  return {std::move(state), triggered};
}

}  // namespace contplan
