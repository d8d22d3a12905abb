#include "qconv/domain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "qconv/error.hpp"

namespace qconv::domain {

namespace {

constexpr double kPi = std::numbers::pi;

double cross2(const Vector2d& a, const Vector2d& b) { return a.x() * b.y() - a.y() * b.x(); }

double segment_distance(const Vector2d& x, const Vector2d& a, const Vector2d& b) {
  const Vector2d d = b - a;
  const double L2 = d.squaredNorm();
  const double s = L2 > 0.0 ? std::clamp((x - a).dot(d) / L2, 0.0, 1.0) : 0.0;
  return (x - (a + s * d)).norm();
}

Vector2d rotate(const Vector2d& v, double ang) {
  const double c = std::cos(ang), s = std::sin(ang);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

}  // namespace

ConvexCurve ConvexCurve::circle(Vector2d center, double radius) {
  if (!(radius > 0.0)) throw std::invalid_argument("circle radius must be positive");
  ConvexCurve c;
  c.kind_ = Kind::Circle;
  c.center_ = center;
  c.a_ = c.b_ = radius;
  return c;
}

ConvexCurve ConvexCurve::ellipse(Vector2d center, double a, double b, double angle) {
  if (!(a > 0.0) || !(b > 0.0)) throw std::invalid_argument("ellipse semi-axes must be positive");
  ConvexCurve c;
  c.kind_ = Kind::Ellipse;
  c.center_ = center;
  c.a_ = a;
  c.b_ = b;
  c.angle_ = angle;
  return c;
}

ConvexCurve ConvexCurve::rounded_polygon(std::vector<Vector2d> vertices, double rho) {
  if (!(rho > 0.0)) throw std::invalid_argument("rounded polygon needs a positive corner radius");
  const std::size_t m = vertices.size();
  if (m < 3) throw std::invalid_argument("rounded polygon needs at least 3 vertices");
  double area = 0.0;
  for (std::size_t i = 0; i < m; ++i) area += cross2(vertices[i], vertices[(i + 1) % m]);
  if (area == 0.0) throw std::invalid_argument("rounded polygon is degenerate");
  if (area < 0.0) std::reverse(vertices.begin(), vertices.end());
  for (std::size_t i = 0; i < m; ++i) {
    const Vector2d e0 = vertices[(i + 1) % m] - vertices[i];
    const Vector2d e1 = vertices[(i + 2) % m] - vertices[(i + 1) % m];
    if (!(cross2(e0, e1) > 0.0)) throw std::invalid_argument("rounded polygon must be strictly convex");
  }
  ConvexCurve c;
  c.kind_ = Kind::RoundedPolygon;
  c.vertices_ = std::move(vertices);
  c.rho_ = rho;
  Vector2d centroid = Vector2d::Zero();
  for (const auto& v : c.vertices_) centroid += v;
  c.center_ = centroid / static_cast<double>(m);
  return c;
}

std::string ConvexCurve::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::Circle:
      os << "circle(center=(" << center_.x() << "," << center_.y() << "), R=" << a_ << ")";
      break;
    case Kind::Ellipse:
      os << "ellipse(center=(" << center_.x() << "," << center_.y() << "), a=" << a_
         << ", b=" << b_ << ", angle=" << angle_ << ")";
      break;
    case Kind::RoundedPolygon:
      os << "rounded_polygon(" << vertices_.size() << " vertices, rho=" << rho_ << ")";
      break;
  }
  return os.str();
}

double ConvexCurve::polygon_distance(const Vector2d& x) const {
  const std::size_t m = vertices_.size();
  bool inside = true;
  for (std::size_t i = 0; i < m; ++i) {
    if (cross2(vertices_[(i + 1) % m] - vertices_[i], x - vertices_[i]) < 0.0) inside = false;
  }
  if (inside) return 0.0;
  return polygon_boundary_distance(x);
}

double ConvexCurve::polygon_boundary_distance(const Vector2d& x) const {
  const std::size_t m = vertices_.size();
  double d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) d = std::min(d, segment_distance(x, vertices_[i], vertices_[(i + 1) % m]));
  return d;
}

double ConvexCurve::level(const Vector2d& x) const {
  switch (kind_) {
    case Kind::Circle: return (x - center_).norm() - a_;
    case Kind::Ellipse: {
      const Vector2d y = rotate(x - center_, -angle_);
      return (y.x() / a_) * (y.x() / a_) + (y.y() / b_) * (y.y() / b_) - 1.0;
    }
    case Kind::RoundedPolygon: return polygon_distance(x) - rho_;
  }
  return 0.0;
}

double ConvexCurve::distance(const Vector2d& x) const {
  switch (kind_) {
    case Kind::Circle: return std::abs((x - center_).norm() - a_);
    case Kind::Ellipse: {
      const Vector2d y = rotate(x - center_, -angle_);
      auto p = [&](double th) { return Vector2d(a_ * std::cos(th), b_ * std::sin(th)); };
      double best = 0.0, bd = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 64; ++k) {
        const double th = 2.0 * kPi * k / 64.0;
        const double d = (p(th) - y).squaredNorm();
        if (d < bd) {
          bd = d;
          best = th;
        }
      }
      double th = best;
      for (int it = 0; it < 30; ++it) {
        const Vector2d q = p(th);
        const Vector2d dq(-a_ * std::sin(th), b_ * std::cos(th));
        const double g = (q - y).dot(dq);
        const double H = dq.squaredNorm() - (q - y).dot(q);
        double step = H > 0.0 ? -g / H : -0.05 * (g > 0 ? 1.0 : -1.0);
        step = std::clamp(step, -0.1, 0.1);
        th += step;
        if (std::abs(step) < 1e-15) break;
      }
      return std::min(std::sqrt(bd), (p(th) - y).norm());
    }
    case Kind::RoundedPolygon: {
      const double d = polygon_distance(x);
      if (d > 0.0) return std::abs(d - rho_);
      return rho_ + polygon_boundary_distance(x);
    }
  }
  return 0.0;
}

double ConvexCurve::perimeter() const {
  double L = 2.0 * kPi * rho_;
  const std::size_t m = vertices_.size();
  for (std::size_t i = 0; i < m; ++i) L += (vertices_[(i + 1) % m] - vertices_[i]).norm();
  return L;
}

Vector2d ConvexCurve::point(double s) const {
  s -= std::floor(s);
  switch (kind_) {
    case Kind::Circle:
      return center_ + a_ * Vector2d(std::cos(2 * kPi * s), std::sin(2 * kPi * s));
    case Kind::Ellipse:
      return center_ + rotate(Vector2d(a_ * std::cos(2 * kPi * s), b_ * std::sin(2 * kPi * s)), angle_);
    case Kind::RoundedPolygon: {
      const std::size_t m = vertices_.size();
      double left = s * perimeter();
      for (std::size_t i = 0; i < m; ++i) {
        const Vector2d a = vertices_[i], b = vertices_[(i + 1) % m];
        const Vector2d e = b - a;
        const double L = e.norm();
        const Vector2d nrm(e.y() / L, -e.x() / L);  // outward for counterclockwise order
        if (left <= L) return a + (left / L) * e + rho_ * nrm;
        left -= L;
        const Vector2d e1 = vertices_[(i + 2) % m] - b;
        const Vector2d n1(e1.y() / e1.norm(), -e1.x() / e1.norm());
        const double turn = std::atan2(cross2(nrm, n1), nrm.dot(n1));
        if (left <= rho_ * turn) return b + rho_ * rotate(nrm, left / rho_);
        left -= rho_ * turn;
      }
      return vertices_[0] + rho_ * Vector2d(0, -1);
    }
  }
  return center_;
}

std::vector<Vector2d> ConvexCurve::sample(int count) const {
  std::vector<Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) pts.push_back(point(static_cast<double>(k) / count));
  return pts;
}

double ConvexCurve::min_curvature() const {
  switch (kind_) {
    case Kind::Circle: return 1.0 / a_;
    case Kind::Ellipse: return std::min(a_, b_) / (std::max(a_, b_) * std::max(a_, b_));
    case Kind::RoundedPolygon: return 0.0;
  }
  return 0.0;
}

double ConvexCurve::max_curvature() const {
  switch (kind_) {
    case Kind::Circle: return 1.0 / a_;
    case Kind::Ellipse: return std::max(a_, b_) / (std::min(a_, b_) * std::min(a_, b_));
    case Kind::RoundedPolygon: return 1.0 / rho_;
  }
  return 0.0;
}

std::pair<Vector2d, Vector2d> ConvexCurve::bounds() const {
  switch (kind_) {
    case Kind::Circle: return {center_ - Vector2d::Constant(a_), center_ + Vector2d::Constant(a_)};
    case Kind::Ellipse: {
      const double c = std::cos(angle_), s = std::sin(angle_);
      const double hx = std::sqrt(a_ * a_ * c * c + b_ * b_ * s * s);
      const double hy = std::sqrt(a_ * a_ * s * s + b_ * b_ * c * c);
      return {center_ - Vector2d(hx, hy), center_ + Vector2d(hx, hy)};
    }
    case Kind::RoundedPolygon: {
      Vector2d lo = vertices_[0], hi = vertices_[0];
      for (const auto& v : vertices_) {
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
      }
      return {lo - Vector2d::Constant(rho_), hi + Vector2d::Constant(rho_)};
    }
  }
  return {center_, center_};
}

double ConvexCurve::crossing_fraction(const Vector2d& in, const Vector2d& out) const {
  double lo = 0.0, hi = 1.0;
  if (!(level(in) < 0.0)) return 0.0;
  if (level(out) < 0.0) return 1.0;
  for (int it = 0; it < 64; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (level(in + mid * (out - in)) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

double RingDomain2D::boundary_distance(const Vector2d& x) const {
  return std::min(outer.distance(x), inner.distance(x));
}

void RingDomain2D::validate(double margin) const {
  for (const Vector2d& p : inner.sample(2048)) {
    if (!outer.inside(p) || outer.distance(p) < margin) {
      std::ostringstream os;
      os << "domain invariant violated: inner curve " << inner.describe()
         << " must lie strictly inside outer curve " << outer.describe()
         << " with margin >= " << margin << " (failing point (" << p.x() << ", " << p.y()
         << "))";
      throw DomainError(os.str());
    }
  }
}

}  // namespace qconv::domain
