#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "doctest.h"
#include "qconv/error.hpp"
#include "qconv/pdesolve.hpp"

using namespace qconv;
using namespace qconv::pdesolve;
using domain::ConvexCurve;

namespace {

RingDomain2D annulus() { return {ConvexCurve::circle({0, 0}, 2.0), ConvexCurve::circle({0, 0}, 1.0)}; }

RingDomain2D ellipse_ring() {
  return {ConvexCurve::ellipse({0, 0}, 2.0, 1.4, 0.2), ConvexCurve::ellipse({0.1, 0.05}, 0.7, 0.45, -0.3)};
}

template <class Exact>
double max_error(const GridField& g, Exact exact) {
  double e = 0.0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (g.in_omega(g.index(i, j))) e = std::max(e, std::abs(g.at(i, j) - exact(g.node(i, j).norm())));
    }
  }
  return e;
}

double harmonic_exact(double r) { return std::log(2.0 / r) / std::log(2.0); }

// Radial p-Laplace solution integrated as an ODE: (r |u'|^{p-2} u')' = 0
// gives u' = -C r^{-1/(p-1)}; C fixed by the two boundary values using a
// composite Simpson rule on the flux integral.
double plap_ode(double r, double p) {
  auto integral = [&](double a, double b) {
    const int m = 20000;
    const double hh = (b - a) / m;
    double s = 0.0;
    for (int k = 0; k <= m; ++k) {
      const double x = a + k * hh;
      const double w = (k == 0 || k == m) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      s += w * std::pow(x, -1.0 / (p - 1.0));
    }
    return s * hh / 3.0;
  };
  const double C = 1.0 / integral(1.0, 2.0);
  return C * integral(r, 2.0);
}

// Radial minimal-surface solution: u = B - k acosh(r / k) with k chosen so
// that u drops by exactly 1 between r = 1 and r = r_out.
struct Catenoid {
  double k = 0.0, B = 0.0;
  explicit Catenoid(double r_out) {
    double lo = 1e-6, hi = 1.0 - 1e-15;
    auto drop = [&](double kk) { return kk * (std::acosh(r_out / kk) - std::acosh(1.0 / kk)); };
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (drop(mid) < 1.0 ? lo : hi) = mid;
    }
    k = 0.5 * (lo + hi);
    B = 1.0 + k * std::acosh(1.0 / k);
  }
  double operator()(double r) const { return B - k * std::acosh(r / k); }
};

}  // namespace

TEST_CASE("grid classification and arms") {
  const GridField g = build_grid(annulus(), 1.0 / 16);
  int omega = 0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int k = g.index(i, j);
      const double r = g.node(i, j).norm();
      if (g.in_omega(k)) {
        ++omega;
        CHECK(r > 1.0);
        CHECK(r < 2.0);
        for (double a : g.arms[static_cast<std::size_t>(k)]) {
          CHECK(a > 0.0);
          CHECK(a <= 1.0);
        }
      } else {
        CHECK(g.values[static_cast<std::size_t>(k)] == (r < 1.5 ? 1.0 : 0.0));
      }
    }
  }
  // Area of the annulus over h^2.
  CHECK(std::abs(omega - 3.0 * std::numbers::pi * 256) < 0.02 * 3.0 * std::numbers::pi * 256);
  for (const auto& bp : g.boundary_points()) {
    const double r = bp.x.norm();
    CHECK(std::abs(r - (bp.value == 1.0 ? 1.0 : 2.0)) < 1e-12);
  }
}

TEST_CASE("harmonic annulus converges at second order") {
  const auto lap = operators::builtin("laplace_f", 2);
  double prev = 0.0;
  for (double h : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
    const GridField g = solve(lap, annulus(), h);
    const double e = max_error(g, harmonic_exact);
    CHECK(e <= 0.05 * h * h);
    if (prev > 0.0) {
      const double ratio = prev / e;
      CHECK(ratio >= 3.4);
      CHECK(ratio <= 4.6);
    }
    prev = e;
    CHECK(g.final_residual <= 1e-10);
  }
}

TEST_CASE("discrete maximum principle") {
  const auto lap = operators::builtin("laplace_f", 2);
  for (const auto& dom : {annulus(), ellipse_ring()}) {
    const GridField g = solve(lap, dom, 1.0 / 32);
    for (int k = 0; k < g.nx * g.ny; ++k) {
      if (!g.in_omega(k)) continue;
      CHECK(g.values[static_cast<std::size_t>(k)] > 0.0);
      CHECK(g.values[static_cast<std::size_t>(k)] < 1.0);
    }
  }
}

TEST_CASE("p-Laplace radial solution") {
  const double p = 3.0;
  // The ODE oracle agrees with the closed-form profile A sqrt(r) + B.
  const double A = -1.0 / (std::sqrt(2.0) - 1.0), B = 1.0 - A;
  for (double r : {1.0, 1.3, 1.7, 2.0}) CHECK(std::abs(plap_ode(r, p) - (A * std::sqrt(r) + B)) < 1e-10);

  operators::OperatorParams prm;
  prm.p_exponent = p;
  const auto op = operators::builtin("p_laplace", 2, prm);
  for (double h : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
    const GridField g = solve(op, annulus(), h);
    const double e = max_error(g, [&](double r) { return A * std::sqrt(r) + B; });
    CHECK(e <= 0.02 * std::pow(h, 1.5));
  }
}

TEST_CASE("mean curvature radial solution through both solver paths") {
  // A wide ring keeps the profile away from its vertical tangent at r = k.
  const RingDomain2D wide{ConvexCurve::circle({0, 0}, 4.0), ConvexCurve::circle({0, 0}, 1.0)};
  const Catenoid exact(4.0);
  const auto mc = operators::builtin("mean_curvature", 2);
  const auto nondiv = operators::make_quasilinear("mc_nondivergence", 2, *mc.quasilinear_form());
  double prev_div = 0.0, prev_nondiv = 0.0;
  for (double h : {1.0 / 16, 1.0 / 32}) {
    const GridField gd = solve(mc, wide, h);
    const GridField gn = solve(nondiv, wide, h);
    const double ed = max_error(gd, exact), en = max_error(gn, exact);
    CHECK(ed <= 0.05 * h * h);
    CHECK(en <= 0.05 * h * h);
    if (prev_div > 0.0) {
      CHECK(prev_div / ed > 3.4);
      CHECK(prev_nondiv / en > 3.4);
    }
    prev_div = ed;
    prev_nondiv = en;
  }
}

TEST_CASE("semilinear Newton matches the radial Poisson field") {
  operators::OperatorParams prm;
  prm.f = operators::ScalarFn::constant(2.0);
  const auto op = operators::builtin("laplace_f", 2, prm);
  const auto exact = AnalyticField::radial_poisson(2, 2.0, 1.0, 2.0);
  const GridField g = solve(op, annulus(), 1.0 / 32);
  double e = 0.0;
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      if (g.in_omega(g.index(i, j))) e = std::max(e, std::abs(g.at(i, j) - exact.value(g.node(i, j))));
    }
  }
  CHECK(e <= 0.1 / (32.0 * 32.0));
}

TEST_CASE("nonlinear source converges quadratically") {
  operators::OperatorParams prm;
  prm.f = operators::ScalarFn::exponential(0.5, 2.0);
  const auto op = operators::builtin("laplace_f", 2, prm);
  const GridField g = solve(op, ellipse_ring(), 1.0 / 32);
  REQUIRE(g.log.size() >= 3);
  CHECK(g.final_residual <= 1e-10);
  // Each update is at most a modest multiple of the square of the previous one.
  for (std::size_t k = 1; k + 1 < g.log.size(); ++k) {
    if (g.log[k].update > 1e-12) CHECK(g.log[k].update <= 10.0 * g.log[k - 1].update * g.log[k - 1].update + 1e-12);
  }
  CHECK(discrete_residual(op, g) == doctest::Approx(g.final_residual).epsilon(1e-6));
}

TEST_CASE("quasilinear forms") {
  const auto lap = operators::builtin("laplace_f", 2);
  operators::OperatorParams zero;
  zero.beta = 0.0;
  const GridField gl = solve(lap, ellipse_ring(), 1.0 / 32);
  const GridField g0 = solve(operators::builtin("quasilinear", 2, zero), ellipse_ring(), 1.0 / 32);
  double d = 0.0;
  for (std::size_t k = 0; k < gl.values.size(); ++k) d = std::max(d, std::abs(gl.values[k] - g0.values[k]));
  CHECK(d < 1e-9);

  operators::OperatorParams prm;
  prm.beta = 0.8;
  const auto q = operators::builtin("quasilinear", 2, prm);
  const auto user = operators::make_quasilinear("user", 2, *q.quasilinear_form());
  const GridField a = solve(q, ellipse_ring(), 1.0 / 32);
  const GridField b = solve(user, ellipse_ring(), 1.0 / 32);
  d = 0.0;
  for (std::size_t k = 0; k < a.values.size(); ++k) d = std::max(d, std::abs(a.values[k] - b.values[k]));
  CHECK(d < 1e-12);
  CHECK(a.final_residual <= 1e-9);
}

TEST_CASE("solver refuses unsupported operators and bad domains") {
  CHECK_THROWS_AS(solve(operators::builtin("pucci", 2), annulus(), 0.1), std::invalid_argument);
  CHECK_THROWS_AS(solve(operators::builtin("laplace_f", 3), annulus(), 0.1), std::invalid_argument);
  const RingDomain2D bad{ConvexCurve::circle({0, 0}, 1.0), ConvexCurve::circle({0.9, 0}, 0.5)};
  CHECK_THROWS_AS(solve(operators::builtin("laplace_f", 2), bad, 0.05), DomainError);
  operators::OperatorParams prm;
  prm.f = operators::ScalarFn::constant(1.0);
  CHECK_THROWS_AS(solve(operators::builtin("mean_curvature", 2, prm), annulus(), 1.0 / 16, 1e-30, 3),
                  ConvergenceError);
}

TEST_CASE("analytic fields satisfy their equations") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1.5, 1.5);
  for (int n : {2, 3, 4}) {
    const auto harm = AnalyticField::harmonic_annulus(n, 1.0, 2.0);
    const auto pois = AnalyticField::radial_poisson(n, 3.0, 1.0, 2.0);
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd x(n);
      for (int i = 0; i < n; ++i) x(i) = U(rng);
      if (x.norm() < 0.5) continue;
      const auto jh = harm.jet(x), jp = pois.jet(x);
      CHECK(std::abs(jh.hess.trace()) <= 1e-14 * std::max(1.0, jh.hess.cwiseAbs().maxCoeff()));
      CHECK(std::abs(jp.hess.trace() - 3.0) <= 1e-13);
    }
    Eigen::VectorXd e1 = Eigen::VectorXd::Zero(n);
    e1(0) = 1.0;
    CHECK(harm.value(e1) == doctest::Approx(1.0));
    CHECK(std::abs(harm.value(2.0 * e1)) < 1e-15);
    CHECK(pois.value(e1) == doctest::Approx(1.0));
    CHECK(std::abs(pois.value(2.0 * e1)) < 1e-14);
  }
}

TEST_CASE("analytic jets agree with finite differences") {
  std::vector<AnalyticField> fields = {
      AnalyticField::harmonic_annulus(2, 1.0, 2.0), AnalyticField::harmonic_annulus(3, 1.0, 2.0),
      AnalyticField::radial_poisson(3, -2.0, 0.5, 3.0), AnalyticField::sphere(3),
      AnalyticField::ellipsoidal(Eigen::Vector3d(1.0, 2.0, 0.5)), AnalyticField::cylinder_annulus(1.0, 2.0)};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> U(-1.5, 1.5);
  const double eps = 1e-5;
  for (const auto& f : fields) {
    for (int rep = 0; rep < 10; ++rep) {
      Eigen::VectorXd x(f.dim());
      for (int i = 0; i < f.dim(); ++i) x(i) = U(rng);
      if (x.head(2).norm() < 0.6) x(0) += 1.0;
      const auto j = f.jet(x);
      CHECK(j.u == doctest::Approx(f.value(x)).epsilon(1e-14));
      for (int a = 0; a < f.dim(); ++a) {
        Eigen::VectorXd xp = x, xm = x;
        xp(a) += eps;
        xm(a) -= eps;
        const auto jp = f.jet(xp), jm = f.jet(xm);
        CHECK(std::abs((f.value(xp) - f.value(xm)) / (2 * eps) - j.grad(a)) < 1e-7);
        for (int b = 0; b < f.dim(); ++b) {
          CHECK(std::abs((jp.grad(b) - jm.grad(b)) / (2 * eps) - j.hess(a, b)) < 1e-7);
          for (int c = 0; c < f.dim(); ++c) {
            CHECK(std::abs((jp.hess(b, c) - jm.hess(b, c)) / (2 * eps) - j.d3(a, b, c)) < 1e-6);
          }
        }
      }
    }
  }
}

TEST_CASE("analytic level points") {
  const auto s = AnalyticField::sphere(2);
  for (const auto& p : s.level_points(-0.5, 16)) CHECK(p.norm() == doctest::Approx(1.0));
  const auto h = AnalyticField::harmonic_annulus(2, 1.0, 2.0);
  for (double c : {0.05, 0.5, 0.95}) {
    for (const auto& p : h.level_points(c, 12)) {
      CHECK(p.norm() == doctest::Approx(std::pow(2.0, 1.0 - c)).epsilon(1e-12));
      CHECK(h.value(p) == doctest::Approx(c).epsilon(1e-12));
    }
  }
  const auto cyl = AnalyticField::cylinder_annulus(1.0, 2.0);
  for (const auto& p : cyl.level_points(0.3, 20)) CHECK(cyl.value(p) == doctest::Approx(0.3).epsilon(1e-12));
  const auto ell = AnalyticField::ellipsoidal(Eigen::Vector3d(1.0, 2.0, 3.0));
  for (const auto& p : ell.level_points(-0.25, 40)) CHECK(ell.value(p) == doctest::Approx(-0.25).epsilon(1e-12));
  CHECK_THROWS_AS(h.level_points(1.5, 4), std::invalid_argument);
  CHECK_THROWS_AS(s.level_points(0.5, 4), std::invalid_argument);
  CHECK_THROWS_AS(AnalyticField::harmonic_annulus(2, 2.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(AnalyticField::ellipsoidal(Eigen::Vector2d(1.0, -1.0)), std::invalid_argument);
}

TEST_CASE("grid jets of a sampled analytic field") {
  const auto exact = AnalyticField::harmonic_annulus(2, 1.0, 2.0);
  std::vector<double> err;
  for (double h : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
    const GridField g = sample_to_grid(exact, annulus(), h);
    double e = 0.0;
    for (int k = 0; k < 40; ++k) {
      const double th = 2.0 * std::numbers::pi * (k + 0.3) / 40.0;
      for (double r : {1.2, 1.5, 1.8}) {
        const Vector2d x = r * Vector2d(std::cos(th), std::sin(th));
        const auto jg = field_jet(g, x);
        const auto je = exact.jet(x);
        e = std::max({e, std::abs(jg.u - je.u), (jg.grad - je.grad).cwiseAbs().maxCoeff(),
                      (jg.hess - je.hess).cwiseAbs().maxCoeff()});
        // Gradient points toward the inner boundary.
        CHECK(jg.grad.dot(x) < 0.0);
        CHECK(field_value(g, x) == doctest::Approx(jg.u).epsilon(1e-12));
      }
    }
    CHECK(e <= 2.0 * h * h);
    err.push_back(e);
  }
  CHECK(err[0] / err[1] > 3.0);
  CHECK(err[1] / err[2] > 3.0);
}

TEST_CASE("near-boundary jets are refused") {
  const GridField g = sample_to_grid(AnalyticField::harmonic_annulus(2, 1.0, 2.0), annulus(), 1.0 / 16);
  CHECK_THROWS_AS(field_jet(g, {1.02, 0.0}), ExtrapolationRefused);
  CHECK_THROWS_AS(field_jet(g, {1.97, 0.0}), ExtrapolationRefused);
  CHECK_THROWS_AS(field_jet(g, {0.5, 0.0}), ExtrapolationRefused);
  CHECK_NOTHROW(field_jet(g, {1.5, 0.0}));
  CHECK(field_value(g, {1.02, 0.0}) == doctest::Approx(harmonic_exact(1.02)).epsilon(1e-3));
  CHECK(field_value(g, {1.0, 0.0}) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(field_value(g, {2.5, 0.0}), ExtrapolationRefused);
}

TEST_CASE("differentiated equation residual decays under refinement") {
  const auto lap = operators::builtin("laplace_f", 2);
  std::vector<double> res;
  for (double h : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
    const GridField g = solve(lap, annulus(), h);
    double m = 0.0;
    for (int k = 0; k < 24; ++k) {
      const double th = 2.0 * std::numbers::pi * k / 24.0;
      const auto jet = field_jet(g, 1.5 * Vector2d(std::cos(th), std::sin(th)));
      for (int d = 0; d < 2; ++d) m = std::max(m, std::abs(operators::differentiated_equation_residual(lap, jet, d)));
    }
    res.push_back(m);
  }
  CHECK(res[0] / res[1] > 2.5);
  CHECK(res[1] / res[2] > 2.5);
}

TEST_CASE("field files round trip") {
  const auto op = operators::builtin("laplace_f", 2);
  const GridField g = solve(op, ellipse_ring(), 1.0 / 16);
  const std::string csv = "test_pdesolve_field.csv", bin = "test_pdesolve_field.bin";
  write_csv(g, csv);
  write_binary(g, bin);
  const GridField a = read_csv(csv, ellipse_ring());
  const GridField b = read_binary(bin, ellipse_ring());
  CHECK(a.values == g.values);
  CHECK(b.values == g.values);
  CHECK(a.mask == g.mask);
  CHECK_THROWS(read_csv(csv, annulus()));
  CHECK_THROWS(read_binary(csv, ellipse_ring()));
  std::remove(csv.c_str());
  std::remove(bin.c_str());
}
