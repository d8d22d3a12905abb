#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "qconv/operators.hpp"

using namespace qconv::operators;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

OperatorState random_state(int n, std::mt19937_64& rng, double pscale = 1.0) {
  std::normal_distribution<double> N(0.0, 1.0);
  OperatorState s;
  s.r = MatrixXd(n, n);
  s.p = VectorXd(n);
  s.x = VectorXd(n);
  for (int i = 0; i < n; ++i) {
    s.p(i) = pscale * N(rng);
    s.x(i) = N(rng);
    for (int j = 0; j < n; ++j) s.r(i, j) = N(rng);
  }
  s.r = MatrixXd(0.5 * (s.r + s.r.transpose()));
  s.u = N(rng);
  return s;
}

// Symmetric state whose eigenvalues stay at least `gap` away from 0.
OperatorState spectral_state(int n, std::mt19937_64& rng, double gap) {
  OperatorState s = random_state(n, rng);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(s.r);
  VectorXd e = es.eigenvalues();
  for (int k = 0; k < n; ++k) e(k) = (e(k) >= 0 ? 1.0 : -1.0) * (gap + std::abs(e(k)));
  s.r = es.eigenvectors() * e.asDiagonal() * es.eigenvectors().transpose();
  s.r = MatrixXd(0.5 * (s.r + s.r.transpose()));
  return s;
}

// Independent central-difference reference over z = (vec r, p, u, x).
struct RefJet {
  VectorXd grad;
  MatrixXd hess;
};

RefJet reference_jet(const OperatorSpec& spec, const OperatorState& s) {
  const int n = s.dim();
  const int N = n * n + 2 * n + 1;
  VectorXd z(N);
  int c = 0;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) z(c++) = s.r(a, b);
  for (int l = 0; l < n; ++l) z(c++) = s.p(l);
  z(c++) = s.u;
  for (int k = 0; k < n; ++k) z(c++) = s.x(k);
  auto F = [&](const VectorXd& y) {
    OperatorState t;
    t.r = MatrixXd(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) t.r(a, b) = 0.5 * (y(a * n + b) + y(b * n + a));
    t.p = y.segment(n * n, n);
    t.u = y(n * n + n);
    t.x = y.segment(n * n + n + 1, n);
    return spec.value(t);
  };
  RefJet R{VectorXd(N), MatrixXd(N, N)};
  for (int i = 0; i < N; ++i) {
    const double hi = 1e-4 * std::max(1.0, std::abs(z(i)));
    VectorXd e = VectorXd::Zero(N);
    e(i) = hi;
    R.grad(i) = (F(z + e) - F(z - e)) / (2 * hi);
    for (int j = 0; j < N; ++j) {
      const double hj = 1e-4 * std::max(1.0, std::abs(z(j)));
      VectorXd f = VectorXd::Zero(N);
      f(j) = hj;
      R.hess(i, j) = (F(z + e + f) - F(z + e - f) - F(z - e + f) + F(z - e - f)) / (4 * hi * hj);
    }
  }
  return R;
}

void check_against_reference(const OperatorSpec& spec, const OperatorState& s) {
  const OperatorJet J = spec.jet(s);
  const RefJet R = reference_jet(spec, s);
  CHECK(J.value == doctest::Approx(spec.value(s)).epsilon(1e-13));
  const double scale = std::max(1.0, std::max(R.grad.cwiseAbs().maxCoeff(),
                                              J.has_second() ? R.hess.cwiseAbs().maxCoeff() : 0.0));
  CHECK((J.grad - R.grad).cwiseAbs().maxCoeff() <= 1e-5 * scale);
  if (J.has_second()) {
    CHECK((J.hess - R.hess).cwiseAbs().maxCoeff() <= 1e-5 * scale);
    CHECK((J.hess - J.hess.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
  const MatrixXd Fr = J.F_r();
  CHECK((Fr - Fr.transpose()).cwiseAbs().maxCoeff() <= 1e-14 * std::max(1.0, Fr.norm()));
}

OperatorParams with_f(ScalarFn f) {
  OperatorParams P;
  P.f = f;
  return P;
}

double lambda_min(const MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<MatrixXd>(m).eigenvalues()(0);
}

}  // namespace

TEST_CASE("laplace_f closed form") {
  const auto spec = builtin("laplace_f", 3, with_f(ScalarFn::constant(0.0)));
  std::mt19937_64 rng(1);
  const OperatorState s = random_state(3, rng);
  const OperatorJet J = spec.jet(s);
  CHECK((J.F_r() - MatrixXd::Identity(3, 3)).norm() == 0.0);
  CHECK(J.hess.topLeftCorner(9, 9).norm() == 0.0);
  CHECK(J.value == doctest::Approx(s.r.trace()));
  CHECK(spec.quasilinear());
  CHECK(ellipticity(spec, s, 1.0).lambda_min == doctest::Approx(1.0));
  CHECK(ellipticity(spec, s, 1.0).is_uniform);
}

TEST_CASE("mean curvature derivatives along the last axis") {
  const auto spec = builtin("mean_curvature", 3);
  OperatorState s;
  s.r = MatrixXd::Zero(3, 3);
  s.x = VectorXd::Zero(3);
  const double un = 1.3;
  s.p = VectorXd::Unit(3, 2) * un;
  const double W = std::sqrt(1 + un * un);
  MatrixXd expect = MatrixXd::Identity(3, 3) / W;
  expect(2, 2) -= un * un / (W * W * W);
  CHECK((spec.jet(s).F_r() - expect).norm() < 1e-15);
  // |Du| = 1
  s.p = VectorXd::Unit(3, 0);
  CHECK(ellipticity(spec, s, 0.1).lambda_min == doctest::Approx(std::pow(2.0, -1.5)));
}

TEST_CASE("built-in jets match central differences") {
  std::mt19937_64 rng(2);
  const std::vector<ScalarFn> fs = {ScalarFn::constant(0.7), ScalarFn::linear(0.2, -0.5),
                                    ScalarFn::exponential(0.3, 0.8)};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 2;
    OperatorParams P = with_f(fs[trial % 3]);
    const OperatorState s = random_state(n, rng);
    check_against_reference(builtin("laplace_f", n, P), s);
    check_against_reference(builtin("mean_curvature", n, P), s);
    P.p_exponent = trial % 2 ? 3.0 : 1.5;
    check_against_reference(builtin("p_laplace", n, P), s);
    P.beta = 0.6;
    check_against_reference(builtin("quasilinear", n, P), s);
    P.lambda = 0.5;
    P.Lambda = 2.0;
    P.tau = 0.5;
    check_against_reference(builtin("pucci_smoothed", n, P), s);
    P.tau = 1e-3;
    P.side = trial % 2 ? PucciSide::Maximal : PucciSide::Minimal;
    const OperatorState sp = spectral_state(n, rng, 0.05);
    check_against_reference(builtin("pucci_smoothed", n, P), sp);
    check_against_reference(builtin("pucci", n, P), sp);
  }
}

TEST_CASE("pucci degenerate and ellipticity range") {
  std::mt19937_64 rng(3);
  OperatorParams P;
  P.lambda = P.Lambda = 0.7;
  for (const char* name : {"pucci", "pucci_smoothed"}) {
    const auto spec = builtin(name, 3, P);
    const OperatorState s = random_state(3, rng);
    CHECK(spec.value(s) == doctest::Approx(0.7 * s.r.trace()).epsilon(1e-12));
    CHECK((spec.jet(s).F_r() - 0.7 * MatrixXd::Identity(3, 3)).norm() < 1e-12);
  }
  P.lambda = 0.5;
  P.Lambda = 2.0;
  const auto exact = builtin("pucci", 3, P);
  for (int trial = 0; trial < 50; ++trial) {
    OperatorState s = spectral_state(3, rng, 0.1);
    s.r = (trial % 2 ? 1.0 : -1.0) * (s.r * s.r + 0.1 * MatrixXd::Identity(3, 3));
    const double lm = ellipticity(exact, s, P.lambda).lambda_min;
    CHECK(lm >= P.lambda - 1e-12);
    CHECK(lm <= P.Lambda + 1e-12);
  }
  OperatorState kink = random_state(3, rng);
  kink.r = MatrixXd::Zero(3, 3);
  kink.r(0, 0) = 1.0;
  CHECK_FALSE(exact.admissible(kink));
  CHECK_THROWS(ellipticity(exact, kink, 0.5));
  CHECK_FALSE(exact.jet(spectral_state(3, rng, 0.1)).has_second());
}

TEST_CASE("p_laplace with p = 2 is the Laplacian") {
  std::mt19937_64 rng(4);
  OperatorParams P;
  P.p_exponent = 2.0;
  const auto pl = builtin("p_laplace", 3, P);
  const auto lap = builtin("laplace_f", 3, P);
  for (int trial = 0; trial < 20; ++trial) {
    const OperatorState s = random_state(3, rng);
    CHECK(pl.value(s) == doctest::Approx(lap.value(s)).epsilon(1e-14));
    CHECK((pl.jet(s).grad - lap.jet(s).grad).norm() < 1e-13);
  }
}

TEST_CASE("invalid parameters and names") {
  OperatorParams P;
  P.p_exponent = 1.0;
  CHECK_THROWS_AS(builtin("p_laplace", 2, P), std::invalid_argument);
  CHECK_THROWS_AS(builtin("no_such_operator", 2), std::invalid_argument);
  P = {};
  P.lambda = 2.0;
  P.Lambda = 1.0;
  CHECK_THROWS_AS(builtin("pucci", 2, P), std::invalid_argument);
  P = {};
  P.tau = 0.0;
  CHECK_THROWS_AS(builtin("pucci_smoothed", 2, P), std::invalid_argument);
  CHECK_THROWS_AS(builtin("laplace_f", 1), std::invalid_argument);
}

TEST_CASE("varpi") {
  std::mt19937_64 rng(5);
  std::vector<OperatorState> states;
  for (int i = 0; i < 10; ++i) states.push_back(random_state(2, rng));
  CHECK(varpi(builtin("laplace_f", 2), states, 1.0) == 0.0);
  CHECK(varpi(builtin("mean_curvature", 2), states, 0.3) == 0.0);
  CHECK_THROWS_AS(varpi(builtin("laplace_f", 2), std::span<const OperatorState>{}, 1.0),
                  std::invalid_argument);

  OperatorParams P;
  P.lambda = 0.5;
  P.Lambda = 2.0;
  P.tau = 0.3;
  const auto spec = builtin("pucci_smoothed", 2, P);
  double brute = 0.0;
  for (const auto& s : states) {
    const OperatorJet J = spec.jet(s);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c)
          for (int d = 0; d < 2; ++d)
            for (int i = 0; i < 2; ++i)
              for (int j = 0; j < 2; ++j)
                brute = std::max(brute, std::abs(J.F_rr(a, b, c, d)) * std::abs(J.F_r(i, j)) *
                                            s.p.norm() / P.lambda);
  }
  const double v = varpi(spec, states, P.lambda);
  CHECK(v > 0.0);
  CHECK(v == doctest::Approx(brute).epsilon(1e-14));
}

TEST_CASE("differentiated equation residual") {
  const auto spec = builtin("laplace_f", 2);
  // u = log|x|, harmonic in the plane.
  auto harmonic = [](const VectorXd& x) {
    qconv::levelgeom::Jet3 j;
    const double q = x.squaredNorm();
    j.x = x;
    j.u = 0.5 * std::log(q);
    j.grad = x / q;
    j.hess = MatrixXd::Identity(2, 2) / q - 2.0 * x * x.transpose() / (q * q);
    j.third.resize(8);
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) {
          double v = 8.0 * x(a) * x(b) * x(c) / (q * q * q);
          v -= 2.0 * ((a == b) * x(c) + (a == c) * x(b) + (b == c) * x(a)) / (q * q);
          j.third[(a * 2 + b) * 2 + c] = v;
        }
    return j;
  };
  for (double ang : {0.1, 1.0, 2.5, 4.0}) {
    const VectorXd x = 1.4 * (VectorXd(2) << std::cos(ang), std::sin(ang)).finished();
    const auto j = harmonic(x);
    for (int d = 0; d < 2; ++d) {
      CHECK(std::abs(differentiated_equation_residual(spec, j, d)) < 1e-10);
    }
    auto bad = j;
    for (double& t : bad.third) t += 0.7;
    CHECK(std::abs(differentiated_equation_residual(spec, bad, 0)) > 0.5);
    auto missing = j;
    missing.third.clear();
    CHECK_THROWS_AS(differentiated_equation_residual(spec, missing, 0), std::invalid_argument);
  }
}

TEST_CASE("user quasilinear operators") {
  const double beta = 0.4;
  QuasilinearForm form{
      [beta](const VectorXd& p, double, const VectorXd&) {
        return MatrixXd(MatrixXd::Identity(2, 2) + beta * p * p.transpose() / (1 + p.squaredNorm()));
      },
      [](const VectorXd&, double u, const VectorXd&) { return 0.3 + 0.1 * u; }};
  const auto user = make_quasilinear("user", 2, form);
  OperatorParams P;
  P.beta = beta;
  P.f = ScalarFn::linear(0.3, 0.1);
  const auto ref = builtin("quasilinear", 2, P);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const OperatorState s = random_state(2, rng);
    const OperatorJet a = user.jet(s), b = ref.jet(s);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-13));
    CHECK((a.grad - b.grad).cwiseAbs().maxCoeff() < 1e-6 * std::max(1.0, b.sup_norm()));
    CHECK((a.hess - b.hess).cwiseAbs().maxCoeff() < 1e-5 * std::max(1.0, b.sup_norm()));
    CHECK(user.quasilinear());
    CHECK(lambda_min(a.F_r()) > 0.0);
  }
  const auto custom = make_custom(
      "quad", 2, [](const OperatorState& s) { return s.r(0, 1) * s.r(0, 1) + s.p(0) * s.u; },
      nullptr);
  OperatorState s = random_state(2, rng);
  const OperatorJet J = custom.jet(s);
  CHECK(J.F_r(0, 1) == doctest::Approx(s.r(0, 1)).epsilon(1e-6));
  CHECK(J.F_rr(0, 1, 0, 1) == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(J.F_pu(0) == doctest::Approx(1.0).epsilon(1e-6));
}
