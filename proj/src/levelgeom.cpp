#include "qconv/levelgeom.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qconv/error.hpp"

namespace qconv::levelgeom {

namespace {

MatrixXd symmetrized(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

double checked_grad_norm(const Jet2& j, double d0) {
  const double g = j.grad.norm();
  if (!(g >= d0)) {
    std::ostringstream os;
    os << "degenerate gradient: |Du| = " << g << " below d0 = " << d0;
    throw DegenerateGradient(os.str());
  }
  return g;
}

double checked_un(const Jet2& j) {
  const int n = j.dim();
  const double un = j.grad(n - 1);
  if (!(un > 1e-14 * j.grad.norm())) {
    throw CoordinateDegeneracy("u_n must be positive in the working coordinates; rotate first");
  }
  return un;
}

}  // namespace

VectorXd inner_normal(const Jet2& j, double d0) {
  const double g = checked_grad_norm(j, d0);
  const int n = j.dim();
  const double un = j.grad(n - 1);
  if (un == 0.0) throw CoordinateDegeneracy("inner_normal: u_n = 0 in working coordinates");
  return (std::abs(un) / (g * un)) * j.grad;
}

MatrixXd second_fundamental_form(const Jet2& j) {
  const int n = j.dim();
  const int m = n - 1;
  const double un = checked_un(j);
  const double g = j.grad.norm();
  const double unn = j.hess(m, m);
  MatrixXd h(m, m);
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < m; ++k) {
      const double ui = j.grad(i), uk = j.grad(k);
      const double num = un * un * j.hess(i, k) + unn * ui * uk - un * uk * j.hess(i, m) -
                         un * ui * j.hess(k, m);
      h(i, k) = -std::abs(un) * num / (g * un * un * un);
    }
  }
  return h;
}

MatrixXd weingarten(const Jet2& j) {
  const int n = j.dim();
  const int m = n - 1;
  const MatrixXd h = second_fundamental_form(j);
  const double un = j.grad(n - 1);
  const double W = j.grad.norm() / un;
  const VectorXd ut = j.grad.head(m);
  const VectorXd hu = h * ut;
  const double c1 = 1.0 / (W * (1.0 + W) * un * un);
  const double c2 = 1.0 / (W * W * (1.0 + W) * (1.0 + W) * un * un * un * un);
  MatrixXd a = h - c1 * (ut * hu.transpose() + hu * ut.transpose()) +
               c2 * ut.dot(hu) * (ut * ut.transpose());
  return symmetrized(a);
}

AdaptedFrame adapted_frame(const Jet2& j, double d0) {
  const int n = j.dim();
  const int m = n - 1;
  const double g = checked_grad_norm(j, d0);
  const VectorXd unit = j.grad / g;

  // Householder reflection with H e_n = Du/|Du|.
  MatrixXd H = MatrixXd::Identity(n, n);
  VectorXd w = -unit;
  w(m) += 1.0;
  const double ww = w.squaredNorm();
  if (ww > 1e-28) H -= (2.0 / ww) * (w * w.transpose());

  MatrixXd M = H.transpose() * j.hess * H;
  M = symmetrized(M);

  MatrixXd V = MatrixXd::Identity(m, m);
  VectorXd eigs(m);
  if (m > 0) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(M.topLeftCorner(m, m));
    eigs = es.eigenvalues();
    V = es.eigenvectors();
    for (int c = 0; c < m; ++c) {
      for (int r = 0; r < m; ++r) {
        if (std::abs(V(r, c)) > 1e-12) {
          if (V(r, c) < 0.0) V.col(c) *= -1.0;
          break;
        }
      }
    }
  }
  MatrixXd T = MatrixXd::Identity(n, n);
  T.topLeftCorner(m, m) = V;

  AdaptedFrame f;
  f.rotation = H * T;
  f.rotated_hess = f.rotation.transpose() * j.hess * f.rotation;
  f.rotated_hess = symmetrized(f.rotated_hess);
  f.tangential_eigs = eigs;
  f.grad_norm = g;
  return f;
}

double default_rank_tol(const MatrixXd& a) {
  const double amax = a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff();
  return 1e-6 * std::max(1.0, amax);
}

int count_above(const VectorXd& values, double tol) {
  int r = 0;
  for (int i = 0; i < values.size(); ++i) r += values(i) > tol ? 1 : 0;
  return r;
}

CurvatureSample curvature_sample(const Jet2& j, std::optional<double> tol, double d0) {
  const AdaptedFrame f = adapted_frame(j, d0);
  VectorXd principal = -f.tangential_eigs / f.grad_norm;
  std::sort(principal.data(), principal.data() + principal.size());

  CurvatureSample s;
  s.point = j.x;
  s.principal = principal;
  s.kappa_s = principal.size() > 0 ? principal(0) : 0.0;
  s.weingarten = principal.asDiagonal();
  s.rank = count_above(principal, tol.value_or(default_rank_tol(s.weingarten)));
  return s;
}

MatrixXd shifted_tensor(const MatrixXd& a, double u, double eta0, double A) {
  return a - eta0 * std::exp(A * u) * MatrixXd::Identity(a.rows(), a.cols());
}

Jet2 rotate_jet(const Jet2& j, const MatrixXd& R) {
  Jet2 out;
  out.x = R.transpose() * j.x;
  out.u = j.u;
  out.grad = R.transpose() * j.grad;
  out.hess = R.transpose() * j.hess * R;
  out.hess = symmetrized(out.hess);
  return out;
}

}  // namespace qconv::levelgeom
