#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

/// Convex planar curves and ring domains between two of them.
namespace qconv::domain {

using Eigen::Vector2d;

class ConvexCurve {
 public:
  enum class Kind { Circle, Ellipse, RoundedPolygon };

  static ConvexCurve circle(Vector2d center, double radius);
  /// Semi-axes a, b; `angle` rotates the a-axis counterclockwise from x.
  static ConvexCurve ellipse(Vector2d center, double a, double b, double angle = 0.0);
  /// Points within distance `rho` > 0 of the convex hull of `vertices`.
  /// Vertices must form a convex polygon (either orientation).
  static ConvexCurve rounded_polygon(std::vector<Vector2d> vertices, double rho);

  Kind kind() const { return kind_; }
  std::string describe() const;

  /// Negative inside, positive outside; zero on the curve. Not a distance
  /// for ellipses.
  double level(const Vector2d& x) const;
  bool inside(const Vector2d& x) const { return level(x) < 0.0; }

  /// Unsigned distance from x to the curve.
  double distance(const Vector2d& x) const;

  /// Point of the curve at parameter s in [0, 1), counterclockwise.
  Vector2d point(double s) const;
  std::vector<Vector2d> sample(int count) const;

  /// Minimum curvature of the curve (0 for polygons with an edge).
  double min_curvature() const;
  double max_curvature() const;

  /// Axis-aligned bounding box (lo, hi).
  std::pair<Vector2d, Vector2d> bounds() const;

  /// Crossing on the segment from `in` (inside) to `out` (outside), as a
  /// fraction of the segment, by bisection on the level function.
  double crossing_fraction(const Vector2d& in, const Vector2d& out) const;

  // Parameters, for serialization.
  const Vector2d& center() const { return center_; }
  double radius() const { return a_; }
  double semi_a() const { return a_; }
  double semi_b() const { return b_; }
  double angle() const { return angle_; }
  const std::vector<Vector2d>& vertices() const { return vertices_; }
  double rho() const { return rho_; }

 private:
  double polygon_distance(const Vector2d& x) const;  // 0 inside the hull
  double polygon_boundary_distance(const Vector2d& x) const;
  double perimeter() const;

  Kind kind_ = Kind::Circle;
  Vector2d center_ = Vector2d::Zero();
  double a_ = 1.0, b_ = 1.0, angle_ = 0.0;
  std::vector<Vector2d> vertices_;  // counterclockwise
  double rho_ = 0.0;
};

/// Omega = outer region minus the closure of the inner region.
/// Boundary data: 0 on the outer curve, 1 on the inner curve.
struct RingDomain2D {
  ConvexCurve outer;
  ConvexCurve inner;

  bool contains(const Vector2d& x) const { return outer.inside(x) && inner.level(x) > 0.0; }
  /// Distance to the nearer boundary curve.
  double boundary_distance(const Vector2d& x) const;

  /// Throws DomainError unless every sampled inner-curve point lies inside
  /// the outer curve at distance >= margin.
  void validate(double margin) const;
};

}  // namespace qconv::domain
