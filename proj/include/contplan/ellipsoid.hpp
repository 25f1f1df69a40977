#pragma once

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace contplan {

inline constexpr double kEpsPd = 1e-10;
inline constexpr double kEpsReg = 1e-8;

/// Ellipsoid { x : (x - c)^T S^{-1} (x - c) <= 1 } with symmetric positive-definite shape S.
///
/// Used for control-intent sets (accelerations), reachable state sets, positional
/// occupancies and vehicle geometry alike. Construction validates the shape.
class Ellipsoid {
 public:
  Ellipsoid(Eigen::VectorXd center, Eigen::MatrixXd shape);

  static Ellipsoid ball(const Eigen::VectorXd& center, double radius);

  int dim() const { return static_cast<int>(center_.size()); }
  const Eigen::VectorXd& center() const { return center_; }
  const Eigen::MatrixXd& shape() const { return shape_; }

  /// Affine image {M x + t : x in E}, padded isotropically if its spectrum drops under kEpsPd.
  Ellipsoid transformed(const Eigen::MatrixXd& m, const Eigen::VectorXd& t) const;

  /// Points on the boundary at evenly spaced angles (2-D only).
  std::vector<Eigen::Vector2d> boundary_samples(int count) const;

  bool operator==(const Ellipsoid& other) const {
    return center_ == other.center_ && shape_ == other.shape_;
  }

 private:
  Eigen::VectorXd center_;
  Eigen::MatrixXd shape_;
};

/// Axis-aligned ellipse with semi-axes (l_x, l_y).
struct AxisAlignedEllipse {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  Eigen::Vector2d semi_axes = Eigen::Vector2d::Ones();

  AxisAlignedEllipse() = default;
  AxisAlignedEllipse(Eigen::Vector2d c, Eigen::Vector2d l);

  Ellipsoid as_ellipsoid() const;
};

double mahalanobis(const Ellipsoid& e, const Eigen::VectorXd& p);

/// True iff every point of `inner` lies in `outer`, allowing Mahalanobis slack `tol`.
/// Exact: maximizes the outer quadratic form over the inner ellipsoid via the
/// secular equation of the trust-region subproblem.
bool contains(const Ellipsoid& outer, const Ellipsoid& inner, double tol = 1e-9);

/// Largest Mahalanobis distance (w.r.t. `outer`) attained on `inner`.
double max_mahalanobis(const Ellipsoid& outer, const Ellipsoid& inner);

/// Outer ellipsoidal bound of e1 (+) e2 with trace-based scaling:
/// shape = k (S1/r1 + S2/r2), r_i = sqrt(trace S_i), k = r1 + r2.
Ellipsoid minkowski_outer(const Ellipsoid& e1, const Ellipsoid& e2);

/// Shadow of a 4-D state ellipsoid [px, py, vx, vy] on the position plane.
Ellipsoid project_position(const Ellipsoid& e);

/// Axis-aligned ellipse containing a 2-D ellipse. Exact when the shape is
/// already diagonal, otherwise inflated by sqrt(2) per axis.
AxisAlignedEllipse axis_aligned_outer(const Ellipsoid& e);

/// Minimum-volume enclosing ellipse of 2-D points (Khachiyan with
/// Todd-Yildirim away steps). The result is rescaled to contain every point.
Ellipsoid mvee(std::span<const Eigen::Vector2d> points, double tol = 1e-6);

/// Minimum-area ellipse containing `e` and the point `u`. Returns `e` unchanged
/// when u is already inside.
Ellipsoid enclose_point(const Ellipsoid& e, const Eigen::Vector2d& u);

/// Area of a 2-D ellipse, pi * sqrt(det S).
double volume(const Ellipsoid& e);

}  // namespace contplan
