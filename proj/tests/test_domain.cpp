#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "qconv/domain.hpp"
#include "qconv/error.hpp"

using namespace qconv::domain;

namespace {

// Distance to a curve by dense sampling of its parametrization.
double dense_distance(const ConvexCurve& c, const Vector2d& x, int count = 200000) {
  double d = 1e300;
  for (const Vector2d& p : c.sample(count)) d = std::min(d, (p - x).norm());
  return d;
}

std::vector<ConvexCurve> shapes() {
  return {ConvexCurve::circle({0.1, -0.2}, 1.3),
          ConvexCurve::ellipse({0.0, 0.0}, 2.0, 1.0, 0.3),
          ConvexCurve::rounded_polygon({{-1, -1}, {1, -1}, {1.2, 0.8}, {-0.8, 1}}, 0.2)};
}

}  // namespace

TEST_CASE("level sign agrees with inside/outside") {
  auto c = ConvexCurve::circle({0, 0}, 1.0);
  CHECK(c.inside({0.5, 0.0}));
  CHECK_FALSE(c.inside({1.5, 0.0}));
  auto e = ConvexCurve::ellipse({0, 0}, 2.0, 1.0);
  CHECK(e.inside({1.9, 0.0}));
  CHECK_FALSE(e.inside({0.0, 1.1}));
  auto p = ConvexCurve::rounded_polygon({{0, 0}, {1, 0}, {1, 1}, {0, 1}}, 0.1);
  CHECK(p.inside({1.05, 0.5}));
  CHECK_FALSE(p.inside({1.15, 0.5}));
  CHECK(p.inside({1.05, 1.05}));
  CHECK_FALSE(p.inside({1.08, 1.08}));
}

TEST_CASE("sampled points lie on the curve") {
  for (const auto& c : shapes()) {
    for (const Vector2d& p : c.sample(257)) {
      CHECK(std::abs(c.level(p)) < 1e-12);
      CHECK(c.distance(p) < 1e-9);
    }
  }
}

TEST_CASE("distance matches dense sampling") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> U(-2.5, 2.5);
  for (const auto& c : shapes()) {
    for (int k = 0; k < 20; ++k) {
      const Vector2d x(U(rng), U(rng));
      CHECK(std::abs(c.distance(x) - dense_distance(c, x)) < 1e-4);
    }
  }
}

TEST_CASE("crossing fraction lands on the curve") {
  for (const auto& c : shapes()) {
    const Vector2d in = c.center();
    for (int k = 0; k < 16; ++k) {
      const double th = 2 * std::numbers::pi * k / 16.0;
      const Vector2d out = in + 5.0 * Vector2d(std::cos(th), std::sin(th));
      const double s = c.crossing_fraction(in, out);
      CHECK(std::abs(c.level(in + s * (out - in))) < 1e-12);
    }
  }
  auto circ = ConvexCurve::circle({0, 0}, 1.0);
  CHECK(circ.crossing_fraction({0, 0}, {2, 0}) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("curvature extremes") {
  auto e = ConvexCurve::ellipse({0, 0}, 2.0, 1.0, 0.7);
  CHECK(e.min_curvature() == doctest::Approx(0.25));
  CHECK(e.max_curvature() == doctest::Approx(2.0));
  auto p = ConvexCurve::rounded_polygon({{0, 0}, {1, 0}, {0, 1}}, 0.25);
  CHECK(p.min_curvature() == 0.0);
  CHECK(p.max_curvature() == doctest::Approx(4.0));
}

TEST_CASE("bounding boxes contain the curve") {
  for (const auto& c : shapes()) {
    auto [lo, hi] = c.bounds();
    double touch = 1e300;
    for (const Vector2d& p : c.sample(4096)) {
      CHECK(p.x() >= lo.x() - 1e-12);
      CHECK(p.y() <= hi.y() + 1e-12);
      touch = std::min(touch, hi.x() - p.x());
    }
    CHECK(touch < 1e-3);
  }
}

TEST_CASE("polygon input is validated") {
  CHECK_THROWS_AS(ConvexCurve::rounded_polygon({{0, 0}, {1, 0}}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(ConvexCurve::rounded_polygon({{0, 0}, {2, 0}, {1, 0.2}, {2, 2}, {0, 2}}, 0.1),
                  std::invalid_argument);
  CHECK_NOTHROW(ConvexCurve::rounded_polygon({{0, 0}, {0, 1}, {1, 1}, {1, 0}}, 0.1));
  CHECK_THROWS_AS(ConvexCurve::circle({0, 0}, 0.0), std::invalid_argument);
}

TEST_CASE("ring domain membership and validation") {
  RingDomain2D dom{ConvexCurve::circle({0, 0}, 2.0), ConvexCurve::circle({0, 0}, 1.0)};
  CHECK(dom.contains({1.5, 0.0}));
  CHECK_FALSE(dom.contains({0.5, 0.0}));
  CHECK_FALSE(dom.contains({2.5, 0.0}));
  CHECK(dom.boundary_distance({1.4, 0.0}) == doctest::Approx(0.4));
  CHECK_NOTHROW(dom.validate(0.1));
  CHECK_THROWS_AS(dom.validate(1.5), qconv::DomainError);

  RingDomain2D bad{ConvexCurve::circle({0, 0}, 1.0), ConvexCurve::circle({0.8, 0}, 0.5)};
  CHECK_THROWS_AS(bad.validate(0.01), qconv::DomainError);
}
