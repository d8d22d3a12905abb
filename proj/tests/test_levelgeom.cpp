#include <cmath>
#include <random>

#include "doctest.h"
#include "qconv/error.hpp"
#include "qconv/levelgeom.hpp"

using namespace qconv::levelgeom;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Jet2 make_jet(VectorXd x, double u, VectorXd g, MatrixXd h) {
  Jet2 j;
  j.x = std::move(x);
  j.u = u;
  j.grad = std::move(g);
  j.hess = std::move(h);
  return j;
}

// u = -|x|^2 / 2: level sets are spheres, curvature 1/|x|.
Jet2 sphere_jet(const VectorXd& x) {
  const int n = static_cast<int>(x.size());
  return make_jet(x, -0.5 * x.squaredNorm(), -x, -MatrixXd::Identity(n, n));
}

MatrixXd random_orthogonal(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  MatrixXd M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = N(rng);
  Eigen::HouseholderQR<MatrixXd> qr(M);
  return qr.householderQ();
}

Jet2 random_jet(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> N(0.0, 1.0);
  VectorXd x(n), g(n);
  MatrixXd h(n, n);
  for (int i = 0; i < n; ++i) {
    x(i) = N(rng);
    g(i) = N(rng);
    for (int k = 0; k < n; ++k) h(i, k) = N(rng);
  }
  g(n - 1) = std::abs(g(n - 1)) + 0.5;
  return make_jet(x, N(rng), g, 0.5 * (h + h.transpose()));
}

VectorXd sorted_eigs(const MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
  return es.eigenvalues();
}

}  // namespace

TEST_CASE("inner normal") {
  auto j = make_jet(VectorXd::Zero(3), 0.0, VectorXd::Unit(3, 2) * 3.0, MatrixXd::Zero(3, 3));
  CHECK((inner_normal(j) - VectorXd::Unit(3, 2)).norm() < 1e-15);
  j.grad = -j.grad;
  CHECK((inner_normal(j) - VectorXd::Unit(3, 2)).norm() < 1e-15);
  VectorXd g(4);
  g << 3, 4, 0, 5;
  j = make_jet(VectorXd::Zero(4), 0.0, 7.3 * g / std::sqrt(2.0), MatrixXd::Zero(4, 4));
  CHECK(inner_normal(j).norm() == doctest::Approx(1.0).epsilon(1e-14));
  j.grad.setConstant(1e-9);
  CHECK_THROWS_AS(inner_normal(j), qconv::DegenerateGradient);
}

TEST_CASE("second fundamental form, sphere oracles") {
  const double r = 1.7;
  VectorXd x = VectorXd::Unit(3, 2) * r;
  // u = |x|^2/2: signed value -1/r.
  const Jet2 up = make_jet(x, 0.5 * r * r, x, MatrixXd::Identity(3, 3));
  CHECK((second_fundamental_form(up) + MatrixXd::Identity(2, 2) / r).norm() < 1e-14);
  // u = -|x|^2/2 at x = (0,0,-r) has u_n = r > 0: h = I/r.
  const Jet2 down = sphere_jet(-x);
  CHECK((second_fundamental_form(down) - MatrixXd::Identity(2, 2) / r).norm() < 1e-14);
  CHECK((weingarten(down) - MatrixXd::Identity(2, 2) / r).norm() < 1e-14);
  CHECK_THROWS_AS(second_fundamental_form(sphere_jet(x)), qconv::CoordinateDegeneracy);
}

TEST_CASE("adapted frame properties") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 3;
    const Jet2 j = random_jet(n, rng);
    const AdaptedFrame f = adapted_frame(j);
    CHECK((f.rotation.transpose() * f.rotation - MatrixXd::Identity(n, n)).norm() < 1e-12);
    VectorXd rg = f.rotation.transpose() * j.grad;
    CHECK(rg.head(n - 1).norm() < 1e-12 * f.grad_norm);
    CHECK(rg(n - 1) == doctest::Approx(j.grad.norm()).epsilon(1e-12));
    MatrixXd tb = f.rotated_hess.topLeftCorner(n - 1, n - 1);
    CHECK((tb - MatrixXd(tb.diagonal().asDiagonal())).norm() < 1e-10 * (1 + tb.norm()));
    for (int i = 0; i + 1 < n - 1; ++i) CHECK(f.tangential_eigs(i) <= f.tangential_eigs(i + 1));
  }
  const Jet2 aligned = make_jet(VectorXd::Zero(3), 0.0, VectorXd::Unit(3, 2) * 2.0,
                                (VectorXd(3) << -2.0, -1.0, 0.5).finished().asDiagonal());
  CHECK((adapted_frame(aligned).rotation - MatrixXd::Identity(3, 3)).norm() < 1e-14);
  const Jet2 axis = make_jet(VectorXd::Zero(3), 0.0, VectorXd::Unit(3, 0), MatrixXd::Zero(3, 3));
  const AdaptedFrame fa = adapted_frame(axis);
  CHECK((fa.rotation.col(2) - VectorXd::Unit(3, 0)).norm() < 1e-14);
}

TEST_CASE("frame and coordinate formulas agree") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 3;
    const Jet2 j = random_jet(n, rng);
    const VectorXd a = sorted_eigs(weingarten(j));
    const CurvatureSample s = curvature_sample(j);
    CHECK((a - s.principal).norm() <= 1e-10 * std::max(1.0, a.norm()));
  }
}

TEST_CASE("rotation invariance") {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 3;
    const Jet2 j = random_jet(n, rng);
    const MatrixXd R = random_orthogonal(n, rng);
    const Jet2 k = rotate_jet(j, R);
    const VectorXd p = curvature_sample(j).principal;
    const VectorXd q = curvature_sample(k).principal;
    CHECK((p - q).norm() <= 1e-10 * std::max(1.0, p.norm()));
    if (k.grad(n - 1) > 1e-3 * k.grad.norm()) {
      CHECK((sorted_eigs(weingarten(k)) - p).norm() <= 1e-9 * std::max(1.0, p.norm()));
    }
  }
}

TEST_CASE("curvature samples on model surfaces") {
  const double r = 0.8;
  std::mt19937_64 rng(24);
  std::normal_distribution<double> N(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd x(3);
    for (int i = 0; i < 3; ++i) x(i) = N(rng);
    x *= r / x.norm();
    const CurvatureSample s = curvature_sample(sphere_jet(x));
    CHECK((s.principal - VectorXd::Constant(2, 1.0 / r)).norm() < 1e-12);
    CHECK(s.rank == 2);
    CHECK(s.kappa_s == doctest::Approx(1.0 / r));
    // weingarten PSD for the quasiconcave model
    CHECK(s.principal.minCoeff() >= 0.0);
  }
  // cylinder u = -(x1^2 + x2^2)/2 in R^3
  VectorXd x(3);
  x << r * std::cos(0.3), r * std::sin(0.3), 0.4;
  MatrixXd h = MatrixXd::Zero(3, 3);
  h(0, 0) = h(1, 1) = -1.0;
  VectorXd g(3);
  g << -x(0), -x(1), 0.0;
  const CurvatureSample c = curvature_sample(make_jet(x, 0.0, g, h));
  CHECK(std::abs(c.principal(0)) < 1e-14);
  CHECK(c.principal(1) == doctest::Approx(1.0 / r).epsilon(1e-12));
  CHECK(c.rank == 1);
  // planar level set
  const CurvatureSample p =
      curvature_sample(make_jet(x, 0.0, VectorXd::Unit(3, 1), MatrixXd::Zero(3, 3)));
  CHECK(p.principal.norm() == 0.0);
  CHECK(p.rank == 0);
  CHECK_THROWS_AS(curvature_sample(make_jet(x, 0.0, VectorXd::Zero(3), h)),
                  qconv::DegenerateGradient);
}

TEST_CASE("monotone rescaling leaves curvatures unchanged") {
  std::mt19937_64 rng(25);
  for (int trial = 0; trial < 30; ++trial) {
    const Jet2 j = random_jet(3, rng);
    const VectorXd p = curvature_sample(j).principal;
    for (double lam : {0.5, 2.0}) {
      Jet2 k = j;
      k.u *= lam;
      k.grad *= lam;
      k.hess *= lam;
      CHECK((curvature_sample(k).principal - p).norm() <= 1e-12 * std::max(1.0, p.norm()));
    }
  }
}

TEST_CASE("shifted tensor") {
  const double r = 2.0;
  const MatrixXd a = MatrixXd::Identity(2, 2) / r;
  CHECK(shifted_tensor(a, 0.7, 0.0, 1.3) == a);
  CHECK((shifted_tensor(a, 0.7, 1.0 / (2 * r), 0.0) - a / 2).norm() < 1e-15);
  const double A = 0.9, u = 0.4;
  const MatrixXd b = (VectorXd(2) << 0.3, 1.2).finished().asDiagonal();
  const MatrixXd s = shifted_tensor(b, u, 0.3 * std::exp(-A * u), A);
  CHECK(std::abs(sorted_eigs(s)(0)) < 1e-15);
}
