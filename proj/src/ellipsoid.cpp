#include "contplan/ellipsoid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace contplan {

namespace {

Eigen::MatrixXd symmetrized(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

Eigen::MatrixXd lower_cholesky(const Eigen::MatrixXd& shape) {
  Eigen::LLT<Eigen::MatrixXd> llt(shape);
  if (llt.info() != Eigen::Success) throw std::domain_error("ellipsoid shape is not positive definite");
  return llt.matrixL();
}

void require_same_dim(const Ellipsoid& a, const Ellipsoid& b, const char* op) {
  if (a.dim() != b.dim()) throw std::invalid_argument(std::string(op) + ": dimension mismatch");
}

}  // namespace

Ellipsoid::Ellipsoid(Eigen::VectorXd center, Eigen::MatrixXd shape)
    : center_(std::move(center)), shape_(std::move(shape)) {
  const auto n = center_.size();
  if (n != 2 && n != 4) throw std::invalid_argument("ellipsoid dimension must be 2 or 4");
  if (shape_.rows() != n || shape_.cols() != n)
    throw std::invalid_argument("ellipsoid shape does not match center dimension");
  if (!center_.allFinite() || !shape_.allFinite()) throw std::domain_error("ellipsoid has non-finite entries");
  const double scale = std::max(1.0, shape_.cwiseAbs().maxCoeff());
  if ((shape_ - shape_.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw std::domain_error("ellipsoid shape is not symmetric");
  shape_ = symmetrized(shape_);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(shape_, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < kEpsPd * (1.0 - 1e-6))
    throw std::domain_error("ellipsoid shape eigenvalue below " + std::to_string(kEpsPd));
}

Ellipsoid Ellipsoid::ball(const Eigen::VectorXd& center, double radius) {
  const auto n = center.size();
  return {center, radius * radius * Eigen::MatrixXd::Identity(n, n)};
}

Ellipsoid Ellipsoid::transformed(const Eigen::MatrixXd& m, const Eigen::VectorXd& t) const {
  Eigen::MatrixXd s = symmetrized(m * shape_ * m.transpose());
  // A contracting map can push a floor-sized shape under kEpsPd; lift it back (outer bound).
  const double low = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(s, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  if (low < kEpsPd) s.diagonal().array() += kEpsPd - low;
  return {m * center_ + t, s};
}

std::vector<Eigen::Vector2d> Ellipsoid::boundary_samples(int count) const {
  if (dim() != 2) throw std::invalid_argument("boundary_samples: 2-D ellipsoid required");
  const Eigen::MatrixXd l = lower_cholesky(shape_);
  std::vector<Eigen::Vector2d> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double a = 2.0 * std::numbers::pi * i / count;
    out.emplace_back(center_ + l * Eigen::Vector2d(std::cos(a), std::sin(a)));
  }
  return out;
}

AxisAlignedEllipse::AxisAlignedEllipse(Eigen::Vector2d c, Eigen::Vector2d l) : center(c), semi_axes(l) {
  if (!(l.x() > 0.0 && l.y() > 0.0)) throw std::invalid_argument("semi-axes must be strictly positive");
}

Ellipsoid AxisAlignedEllipse::as_ellipsoid() const {
  return {center, semi_axes.array().square().matrix().asDiagonal().toDenseMatrix()};
}

double mahalanobis(const Ellipsoid& e, const Eigen::VectorXd& p) {
  if (p.size() != e.dim()) throw std::invalid_argument("mahalanobis: dimension mismatch");
  const Eigen::VectorXd diff = p - e.center();
  const Eigen::VectorXd w = e.shape().llt().solve(diff);
  return std::sqrt(std::max(0.0, diff.dot(w)));
}

double max_mahalanobis(const Ellipsoid& outer, const Ellipsoid& inner) {
  require_same_dim(outer, inner, "contains");
  const Eigen::MatrixXd lo = lower_cholesky(outer.shape());
  const Eigen::MatrixXd li = lower_cholesky(inner.shape());
  const auto tri = lo.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd m = tri.solve(li);
  const Eigen::VectorXd b = tri.solve(inner.center() - outer.center());

  // max over |w| <= 1 of |M w + b|^2 = min over mu > h_max of mu + g^T (mu I - H)^{-1} g + b^T b.
  const Eigen::MatrixXd h = m.transpose() * m;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
  const Eigen::VectorXd hv = eig.eigenvalues();
  const Eigen::VectorXd gamma = eig.eigenvectors().transpose() * (m.transpose() * b);
  const double h_max = hv.maxCoeff();

  auto secular = [&](double mu) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < hv.size(); ++j) {
      const double gap = mu - hv(j);
      if (gamma(j) != 0.0) s += gamma(j) * gamma(j) / (gap * gap);
    }
    return s;
  };
  double lo_mu = h_max;
  double hi_mu = h_max + gamma.norm() + 1e-300;
  hi_mu = std::max(hi_mu, std::nextafter(h_max, INFINITY));
  for (int it = 0; it < 200 && hi_mu > std::nextafter(lo_mu, INFINITY); ++it) {
    const double mid = 0.5 * (lo_mu + hi_mu);
    if (secular(mid) > 1.0) {
      lo_mu = mid;
    } else {
      hi_mu = mid;
    }
  }
  double value = hi_mu;
  for (Eigen::Index j = 0; j < hv.size(); ++j) {
    if (gamma(j) != 0.0) value += gamma(j) * gamma(j) / (hi_mu - hv(j));
  }
  value += b.squaredNorm();
  return std::sqrt(std::max(0.0, value));
}

bool contains(const Ellipsoid& outer, const Ellipsoid& inner, double tol) {
  return max_mahalanobis(outer, inner) <= 1.0 + tol;
}

Ellipsoid minkowski_outer(const Ellipsoid& e1, const Ellipsoid& e2) {
  require_same_dim(e1, e2, "minkowski_outer");
  const double r1 = std::sqrt(e1.shape().trace());
  const double r2 = std::sqrt(e2.shape().trace());
  const double k = r1 + r2;
  return {e1.center() + e2.center(), k * (e1.shape() / r1 + e2.shape() / r2)};
}

Ellipsoid project_position(const Ellipsoid& e) {
  if (e.dim() != 4) throw std::invalid_argument("project_position: 4-D state ellipsoid required");
  return {e.center().head<2>(), e.shape().topLeftCorner<2, 2>()};
}

AxisAlignedEllipse axis_aligned_outer(const Ellipsoid& e) {
  if (e.dim() != 2) throw std::invalid_argument("axis_aligned_outer: 2-D ellipse required");
  const Eigen::MatrixXd& s = e.shape();
  const double inflate = std::abs(s(0, 1)) < 1e-12 ? 1.0 : 2.0;
  return {e.center(), Eigen::Vector2d(std::sqrt(inflate * s(0, 0)), std::sqrt(inflate * s(1, 1)))};
}

Ellipsoid mvee(std::span<const Eigen::Vector2d> points, double tol) {
  if (points.empty()) throw std::invalid_argument("mvee: empty point set");
  if (!(tol > 0.0)) throw std::invalid_argument("mvee: tolerance must be positive");
  const auto m = static_cast<Eigen::Index>(points.size());

  Eigen::Matrix2Xd p(2, m);
  for (Eigen::Index i = 0; i < m; ++i) p.col(i) = points[static_cast<std::size_t>(i)];
  const Eigen::Vector2d mean = p.rowwise().mean();
  const Eigen::Matrix2Xd centered = p.colwise() - mean;
  const double spread = centered.cwiseAbs().maxCoeff();
  const Eigen::Matrix2d id = Eigen::Matrix2d::Identity();

  if (spread < 1e-12) return {mean, kEpsReg * id};

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  const auto sv = svd.singularValues();
  if (sv(1) <= 1e-9 * sv(0)) {
    // Collinear: enclosing segment, inflated to a thin ellipse.
    const Eigen::Vector2d dir = svd.matrixU().col(0);
    const Eigen::VectorXd s = dir.transpose() * centered;
    const double lo = s.minCoeff();
    const double hi = s.maxCoeff();
    const Eigen::Vector2d c = mean + 0.5 * (lo + hi) * dir;
    const double half = 0.5 * (hi - lo);
    Eigen::Matrix2d shape = half * half * dir * dir.transpose() + kEpsReg * id;
    Ellipsoid out(c, shape);
    double worst = 0.0;
    for (const auto& q : points) worst = std::max(worst, mahalanobis(out, q));
    if (worst > 1.0) shape *= worst * worst;
    return {c, shape};
  }

  // Khachiyan on the lifted points q_i = [p_i; 1] with away steps.
  constexpr double d = 2.0;
  Eigen::Matrix3Xd q(3, m);
  q.topRows<2>() = p;
  q.row(2).setOnes();
  Eigen::VectorXd u = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd lev(m);
  for (int it = 0; it < 200000; ++it) {
    const Eigen::Matrix3d x = q * u.asDiagonal() * q.transpose();
    const Eigen::Matrix3d xinv = x.inverse();
    lev = (q.transpose() * xinv * q).diagonal();
    Eigen::Index j = 0;
    const double mj = lev.maxCoeff(&j);
    Eigen::Index k = -1;
    double mk = INFINITY;
    for (Eigen::Index i = 0; i < m; ++i) {
      if (u(i) > 0.0 && lev(i) < mk) {
        mk = lev(i);
        k = i;
      }
    }
    const double eps_plus = mj / (d + 1.0) - 1.0;
    const double eps_minus = 1.0 - mk / (d + 1.0);
    if (std::max(eps_plus, eps_minus) <= tol) break;
    if (eps_plus > eps_minus) {
      const double beta = (mj - (d + 1.0)) / ((d + 1.0) * (mj - 1.0));
      u *= (1.0 - beta);
      u(j) += beta;
    } else {
      double beta = (d + 1.0 - mk) / ((d + 1.0) * (mk - 1.0));
      if (u(k) < 1.0) beta = std::min(beta, u(k) / (1.0 - u(k)));
      u *= (1.0 + beta);
      u(k) -= beta;
      if (u(k) < 1e-300) u(k) = 0.0;
    }
  }
  const Eigen::Vector2d c = p * u;
  Eigen::Matrix2d shape = d * (p * u.asDiagonal() * p.transpose() - c * c.transpose());
  shape = 0.5 * (shape + shape.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(shape, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < kEpsReg) shape += kEpsReg * id;
  Ellipsoid out(c, shape);
  double worst = 0.0;
  for (const auto& pt : points) worst = std::max(worst, mahalanobis(out, pt));
  if (worst > 1.0) shape *= worst * worst;
  return {c, shape};
}

namespace {

// Whitened problem: smallest b such that the ellipse centered (t, 0) with
// semi-axes (a, b) contains the unit disk, where a = r - t.
double min_minor_axis(double r, double t) {
  const double a = r - t;
  if (t <= 0.0) return 1.0;
  const double kq = a * a - t * t - 1.0;
  const double c = -2.0 * t / (kq + std::sqrt(std::max(0.0, kq * kq - 4.0 * t * t)));
  const double denom = a * a - (c - t) * (c - t);
  const double b2 = (1.0 - c * c) * a * a / denom;
  return std::sqrt(std::max(b2, 0.0));
}

}  // namespace

Ellipsoid enclose_point(const Ellipsoid& e, const Eigen::Vector2d& u) {
  if (e.dim() != 2) throw std::invalid_argument("enclose_point: 2-D ellipse required");
  const Eigen::Matrix2d l = lower_cholesky(e.shape());
  const Eigen::Vector2d uw = l.triangularView<Eigen::Lower>().solve(Eigen::Vector2d(u - e.center()));
  const double r = uw.norm();
  if (r <= 1.0) return e;

  const double t_max = 0.5 * (r - 1.0) * (1.0 - 1e-12);
  auto area = [&](double t) { return (r - t) * min_minor_axis(r, t); };

  constexpr int kGrid = 64;
  int best = 0;
  double best_area = area(0.0);
  for (int i = 1; i <= kGrid; ++i) {
    const double v = area(t_max * i / kGrid);
    if (v < best_area) {
      best_area = v;
      best = i;
    }
  }
  double lo = t_max * std::max(0, best - 1) / kGrid;
  double hi = t_max * std::min(kGrid, best + 1) / kGrid;
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = hi - phi * (hi - lo);
  double x2 = lo + phi * (hi - lo);
  double f1 = area(x1);
  double f2 = area(x2);
  for (int it = 0; it < 100; ++it) {
    if (f1 < f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - phi * (hi - lo);
      f1 = area(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + phi * (hi - lo);
      f2 = area(x2);
    }
  }
  double t = 0.5 * (lo + hi);
  if (area(t) > best_area) t = t_max * best / kGrid;

  const double a = r - t;
  const double b = min_minor_axis(r, t);
  const Eigen::Vector2d e1 = uw / r;
  Eigen::Matrix2d rot;
  rot.col(0) = e1;
  rot.col(1) = Eigen::Vector2d(-e1.y(), e1.x());
  const Eigen::Matrix2d shape_w = rot * Eigen::Vector2d(a * a, b * b).asDiagonal() * rot.transpose();
  Eigen::Matrix2d shape = l * shape_w * l.transpose();
  shape = 0.5 * (shape + shape.transpose()) * (1.0 + 1e-9);
  return {e.center() + l * (t * e1), shape};
}

double volume(const Ellipsoid& e) {
  if (e.dim() != 2) throw std::invalid_argument("volume: 2-D ellipse required");
  return std::numbers::pi * std::sqrt(e.shape().determinant());
}

}  // namespace contplan
