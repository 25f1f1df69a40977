#include "contplan/bezier.hpp"

#include <cmath>
#include <stdexcept>

namespace contplan {

namespace {

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

Eigen::VectorXd bernstein(int order, double nu) {
  Eigen::VectorXd b(order + 1);
  for (int j = 0; j <= order; ++j) b(j) = binomial(order, j) * std::pow(nu, j) * std::pow(1.0 - nu, order - j);
  return b;
}

}  // namespace

Eigen::VectorXd BernsteinBasis::evaluate(int order, int derivative, double nu) {
  if (derivative == 0) return bernstein(order, nu);
  if (derivative > order) return Eigen::VectorXd::Zero(order + 1);
  // d/dnu b_{j,n} = n (b_{j-1,n-1} - b_{j,n-1}).
  const Eigen::VectorXd lower = evaluate(order - 1, derivative - 1, nu);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(order + 1);
  for (int j = 0; j <= order; ++j) {
    if (j >= 1) out(j) += lower(j - 1);
    if (j <= order - 1) out(j) -= lower(j);
  }
  return order * out;
}

BernsteinBasis build_basis(int order, int horizon, double duration) {
  if (order < 3) throw std::invalid_argument("build_basis: order must be >= 3");
  if (order > kMaxBezierOrder) throw std::invalid_argument("build_basis: order above 15 is ill-conditioned");
  if (horizon < 1) throw std::invalid_argument("build_basis: horizon must be >= 1");
  if (!(duration > 0.0)) throw std::invalid_argument("build_basis: duration must be positive");
  BernsteinBasis basis;
  basis.order = order;
  basis.horizon = horizon;
  basis.duration = duration;
  for (int r = 0; r < 4; ++r) {
    basis.d[static_cast<std::size_t>(r)].resize(order + 1, horizon + 1);
    const double scale = std::pow(duration, -r);
    for (int k = 0; k <= horizon; ++k) {
      basis.d[static_cast<std::size_t>(r)].col(k) =
          scale * BernsteinBasis::evaluate(order, r, static_cast<double>(k) / horizon);
    }
  }
  return basis;
}

std::vector<EvState> reconstruct_states(const BranchCurve& curve, const BernsteinBasis& basis) {
  const auto n = basis.order + 1;
  if (curve.cx.size() != n || curve.cy.size() != n || curve.ctheta.size() != n)
    throw std::invalid_argument("reconstruct_states: control point count does not match basis");
  std::vector<EvState> out(static_cast<std::size_t>(basis.horizon) + 1);
  const Eigen::VectorXd px = basis.pos().transpose() * curve.cx;
  const Eigen::VectorXd py = basis.pos().transpose() * curve.cy;
  const Eigen::VectorXd th = basis.pos().transpose() * curve.ctheta;
  const Eigen::VectorXd thd = basis.vel().transpose() * curve.ctheta;
  const Eigen::VectorXd vx = basis.vel().transpose() * curve.cx;
  const Eigen::VectorXd vy = basis.vel().transpose() * curve.cy;
  const Eigen::VectorXd ax = basis.acc().transpose() * curve.cx;
  const Eigen::VectorXd ay = basis.acc().transpose() * curve.cy;
  const Eigen::VectorXd jx = basis.jerk().transpose() * curve.cx;
  const Eigen::VectorXd jy = basis.jerk().transpose() * curve.cy;
  for (int k = 0; k <= basis.horizon; ++k) {
    auto& s = out[static_cast<std::size_t>(k)];
    s << px(k), py(k), th(k), thd(k), std::hypot(vx(k), vy(k)), ax(k), ay(k), jx(k), jy(k);
  }
  return out;
}

FitResult fit_curve(std::span<const FitSample> samples, const BernsteinBasis& basis) {
  int rows = 0;
  for (const auto& s : samples) {
    if (s.step < 0 || s.step > basis.horizon) throw std::out_of_range("fit_curve: sample step outside horizon");
    rows += 1 + (s.velocity_weight > 0.0) + (s.acceleration_weight > 0.0);
  }
  Eigen::MatrixXd a(rows, basis.order + 1);
  Eigen::VectorXd rhs(rows);
  int r = 0;
  for (const auto& s : samples) {
    a.row(r) = basis.pos().col(s.step).transpose();
    rhs(r++) = s.position;
    if (s.velocity_weight > 0.0) {
      a.row(r) = s.velocity_weight * basis.vel().col(s.step).transpose();
      rhs(r++) = s.velocity_weight * s.velocity;
    }
    if (s.acceleration_weight > 0.0) {
      a.row(r) = s.acceleration_weight * basis.acc().col(s.step).transpose();
      rhs(r++) = s.acceleration_weight * s.acceleration;
    }
  }
  FitResult out;
  if (rows == 0) {
    out.control = Eigen::VectorXd::Zero(basis.order + 1);
    out.rank_deficient = true;
    return out;
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  cod.setThreshold(1e-12);
  out.control = cod.solve(rhs);
  out.rank_deficient = cod.rank() < basis.order + 1;
  double worst = 0.0;
  for (const auto& s : samples) {
    worst = std::max(worst, std::abs(basis.pos().col(s.step).dot(out.control) - s.position));
  }
  out.max_residual = worst;
  return out;
}

}  // namespace contplan
