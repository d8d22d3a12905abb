#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qconv/domain.hpp"
#include "qconv/levelgeom.hpp"
#include "qconv/operators.hpp"

/// Dirichlet problems F(D^2u, Du, u, x) = 0 on planar convex rings with
/// u = 0 on the outer curve and u = 1 on the inner curve, solved on a
/// masked uniform grid with Shortley-Weller boundary arms. In non-divergence
/// rows, second differences next to the boundary use four points (exact for
/// cubics) wherever a full step is available on the far side.
namespace qconv::pdesolve {

using domain::RingDomain2D;
using Eigen::Vector2d;
using Eigen::VectorXd;
using levelgeom::Jet3;

enum class NodeType : std::uint8_t { Interior = 0, NearBoundary = 1, Exterior = 2, Hole = 3 };

/// Arm order in GridField::arms.
enum Arm { East = 0, West = 1, North = 2, South = 3 };

struct BoundaryPoint {
  Vector2d x;
  double value = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  double update = 0.0;    // max-norm change of u
  double residual = 0.0;  // max-norm nonlinear residual, diagonal-scaled
};

/// Unknowns live on Interior and NearBoundary nodes. Exterior nodes hold 0,
/// Hole nodes hold 1. Arms are fractions of h from a node to its neighbour
/// or to the boundary crossing in that direction.
struct GridField {
  int nx = 0, ny = 0;
  double h = 0.0;
  Vector2d origin = Vector2d::Zero();
  std::vector<NodeType> mask;
  std::vector<double> values;
  std::vector<std::array<double, 4>> arms;
  RingDomain2D domain;
  std::string operator_name;
  std::vector<IterationRecord> log;
  double final_residual = 0.0;

  int index(int i, int j) const { return j * nx + i; }
  Vector2d node(int i, int j) const { return origin + h * Vector2d(i, j); }
  bool in_omega(int idx) const {
    return mask[static_cast<std::size_t>(idx)] == NodeType::Interior ||
           mask[static_cast<std::size_t>(idx)] == NodeType::NearBoundary;
  }
  double at(int i, int j) const { return values[static_cast<std::size_t>(index(i, j))]; }

  /// Dirichlet crossing points with their boundary values.
  std::vector<BoundaryPoint> boundary_points() const;
  /// Smallest |Du| over Omega nodes from central differences.
  double min_gradient_norm() const;
};

/// Grid covering the outer bounding box with a 2h margin, nodes classified
/// and arms computed; Omega values start at 0. Throws DomainError when the
/// ring is invalid at this spacing.
GridField build_grid(const RingDomain2D& dom, double h);

/// Solves for laplace_f and for mean_curvature and p_laplace in flux form by
/// damped Newton, and for other operators carrying a quasilinear form by
/// non-divergence Picard with lagged coefficients. Every path starts from
/// the harmonic solution and stops when the max-norm update drops below
/// `tol`. Throws ConvergenceError after `max_iter`
/// iterations and std::invalid_argument for operators without a
/// quasilinear structure or of dimension other than 2.
GridField solve(const operators::OperatorSpec& spec, const RingDomain2D& dom, double h,
                double tol = 1e-10, int max_iter = 200);

/// Discrete nonlinear residual of `spec` on the field, diagonal-scaled.
double discrete_residual(const operators::OperatorSpec& spec, const GridField& g);

/// Closed-form reference fields with exact jets through third order.
class AnalyticField {
 public:
  enum class Kind { HarmonicAnnulus, RadialPoisson, Sphere, Ellipsoidal, CylinderAnnulus };

  /// Harmonic in R^n, 1 on |x| = r_inner and 0 on |x| = r_outer.
  static AnalyticField harmonic_annulus(int n, double r_inner, double r_outer);
  /// Delta u = c in R^n with the same boundary data as harmonic_annulus.
  static AnalyticField radial_poisson(int n, double c, double r_inner, double r_outer);
  /// u = -|x|^2 / 2.
  static AnalyticField sphere(int n);
  /// u = -sum x_i^2 / a_i^2.
  static AnalyticField ellipsoidal(VectorXd semi_axes);
  /// R^3 field harmonic in (x_1, x_2), independent of x_3.
  static AnalyticField cylinder_annulus(double r_inner, double r_outer);

  Kind kind() const { return kind_; }
  int dim() const { return n_; }
  std::string describe() const;
  /// Boundary radii of the radial kinds (0 otherwise).
  double r_inner() const { return r_inner_; }
  double r_outer() const { return r_outer_; }

  double value(const VectorXd& x) const;
  Jet3 jet(const VectorXd& x) const;

  /// Points on {u = c}: circles/spheres for radial kinds (axial samples
  /// z in [-1, 1] for the cylinder), scaled spheres for ellipsoidal.
  /// Throws std::invalid_argument if c is outside the field's range.
  std::vector<VectorXd> level_points(double c, int count) const;

 private:
  // u = G(s), s = |x_{1..m}|^2 / 2, G = c1 s + c2 Phi(s) + c3.
  double G(double s, int order) const;

  Kind kind_ = Kind::Sphere;
  int n_ = 2;
  int m_ = 2;
  double c1_ = 0.0, c2_ = 0.0, c3_ = 0.0;
  double r_inner_ = 0.0, r_outer_ = 0.0;
  VectorXd axes_;
};

/// Analytic values on the grid of `dom` at spacing h.
GridField sample_to_grid(const AnalyticField& f, const RingDomain2D& dom, double h);

/// Weighted local quartic least-squares fit over Omega nodes and boundary
/// crossings within 3.2 h. Throws ExtrapolationRefused closer than
/// `kJetMargin` * h to the boundary or outside Omega.
inline constexpr double kJetMargin = 1.0;
Jet3 field_jet(const GridField& g, const Vector2d& x);
/// Value from the same fit; allowed anywhere in the closure of Omega.
double field_value(const GridField& g, const Vector2d& x);

/// CSV: header `nx,ny,h,origin_x,origin_y`, a line with the values, then
/// `i,j,mask,value` rows.
void write_csv(const GridField& g, const std::string& path);
/// Reads values and mask, rebuilding geometry from `dom`; throws
/// std::runtime_error on malformed input or a grid that does not match.
GridField read_csv(const std::string& path, const RingDomain2D& dom);
void write_binary(const GridField& g, const std::string& path);
GridField read_binary(const std::string& path, const RingDomain2D& dom);

}  // namespace qconv::pdesolve
