#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

/// Curvature of level surfaces {u = c} from point data (u, Du, D^2u).
///
/// Curvatures are measured against the upward inner normal
///   n = |u_n| / (|Du| u_n) * Du,
/// so level sets of a quasiconcave u (convex super-level sets) carry
/// nonnegative principal curvatures. Two routes are provided: the
/// general-coordinate formulas (valid whenever u_n > 0) and the adapted
/// frame with Du = |Du| e_n and a diagonal tangential Hessian block.
namespace qconv::levelgeom {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kDefaultD0 = 1e-6;

struct Jet2 {
  VectorXd x;
  double u = 0.0;
  VectorXd grad;
  MatrixXd hess;

  int dim() const { return static_cast<int>(grad.size()); }
};

/// Jet2 plus the symmetric third-derivative tensor, stored flat (i*n+j)*n+k.
/// An empty `third` means third derivatives are unavailable.
struct Jet3 : Jet2 {
  std::vector<double> third;

  bool has_third() const { return !third.empty(); }
  double d3(int i, int j, int k) const {
    const int n = dim();
    return third[static_cast<std::size_t>((i * n + j) * n + k)];
  }
};

struct AdaptedFrame {
  MatrixXd rotation;        // columns e_1..e_n; last column Du/|Du|
  VectorXd tangential_eigs; // ascending
  MatrixXd rotated_hess;    // R^T D^2u R
  double grad_norm = 0.0;
};

struct CurvatureSample {
  VectorXd point;
  VectorXd principal;  // ascending
  double kappa_s = 0.0;
  int rank = 0;
  MatrixXd weingarten; // adapted-frame Weingarten tensor (diagonal)
};

VectorXd inner_normal(const Jet2& j, double d0 = kDefaultD0);

/// Second fundamental form in the working coordinates. Throws
/// CoordinateDegeneracy unless u_n > 0.
MatrixXd second_fundamental_form(const Jet2& j);

/// Weingarten tensor in the working coordinates, W = |Du| / u_n.
MatrixXd weingarten(const Jet2& j);

AdaptedFrame adapted_frame(const Jet2& j, double d0 = kDefaultD0);

/// Rank threshold 1e-6 * max(1, |a|_inf).
double default_rank_tol(const MatrixXd& a);
int count_above(const VectorXd& values, double tol);

CurvatureSample curvature_sample(const Jet2& j, std::optional<double> tol = std::nullopt,
                                 double d0 = kDefaultD0);

/// a - eta0 * exp(A u) * I.
MatrixXd shifted_tensor(const MatrixXd& a, double u, double eta0, double A);

/// Jet of v(y) = u(R y) at y = R^T x, for orthogonal R.
Jet2 rotate_jet(const Jet2& j, const MatrixXd& R);

}  // namespace qconv::levelgeom
