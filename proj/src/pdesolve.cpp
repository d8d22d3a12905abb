#include "qconv/pdesolve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Sparse>

#include "qconv/error.hpp"

namespace qconv::pdesolve {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using operators::Kind;
using operators::OperatorSpec;

constexpr int kDi[4] = {1, -1, 0, 0};
constexpr int kDj[4] = {0, 0, 1, -1};

double boundary_value(NodeType t) { return t == NodeType::Hole ? 1.0 : 0.0; }

// Shortley-Weller weights of u_xx (E, W) and u_yy (N, S).
std::array<double, 4> sw_weights(const std::array<double, 4>& arm, double h) {
  const double hE = arm[East] * h, hW = arm[West] * h, hN = arm[North] * h, hS = arm[South] * h;
  return {2.0 / (hE * (hE + hW)), 2.0 / (hW * (hE + hW)), 2.0 / (hN * (hN + hS)),
          2.0 / (hS * (hN + hS))};
}

struct StencilTerm {
  int idx;  // grid index holding the value (an unknown or a boundary value)
  double w;
};

// Second difference along one axis at (i, j). Where exactly one arm is cut by
// the boundary and the other side has a full step, the four points (node,
// crossing, next node, the point after it) give a formula exact for cubics,
// so the truncation error stays O(h^2) next to the boundary. Shortley-Weller
// otherwise. Returns the centre weight; other weights go to `terms`.
double axis_second_difference(const GridField& g, int i, int j, int axis, std::vector<StencilTerm>& terms) {
  const int dp = axis == 0 ? East : North, dm = axis == 0 ? West : South;
  const auto& arm = g.arms[static_cast<std::size_t>(g.index(i, j))];
  auto step = [&](int d, int k) { return g.index(i + k * kDi[d], j + k * kDj[d]); };
  auto full = [&](int d) { return arm[d] == 1.0 && g.in_omega(step(d, 1)); };
  const double h2 = g.h * g.h;
  for (const auto& [f, c] : {std::pair{dp, dm}, std::pair{dm, dp}}) {
    if (!full(f) || full(c)) continue;
    const int near = step(f, 1), far = step(f, 2);
    const double b = g.arms[static_cast<std::size_t>(near)][f];
    if (b < 1.0 && g.in_omega(far)) break;  // two crossings within a step
    // Abscissae in units of h: node 0, crossing -theta, near 1, far 1 + b.
    const double x[4] = {0.0, -arm[c], 1.0, 1.0 + b};
    double w[4];
    for (int m = 0; m < 4; ++m) {
      double sum = 0.0, den = 1.0;
      for (int n = 0; n < 4; ++n) {
        if (n == m) continue;
        sum += x[n];
        den *= x[m] - x[n];
      }
      w[m] = -2.0 * sum / den / h2;
    }
    terms.push_back({step(c, 1), w[1]});
    terms.push_back({near, w[2]});
    terms.push_back({far, w[3]});
    return w[0];
  }
  const double hp = arm[dp] * g.h, hm = arm[dm] * g.h;
  const double wp = 2.0 / (hp * (hp + hm)), wm = 2.0 / (hm * (hp + hm));
  terms.push_back({step(dp, 1), wp});
  terms.push_back({step(dm, 1), wm});
  return -wp - wm;
}

// Three-point derivative on unequal arms: forward value, backward value.
double central(double up, double u0, double um, double hp, double hm) {
  return (hm * hm * (up - u0) + hp * hp * (u0 - um)) / (hp * hm * (hp + hm));
}

struct Neighbour {
  double value;
  double dist;
  int idx;  // grid index of the neighbour node
};

Neighbour neighbour(const GridField& g, int i, int j, int d) {
  const int q = g.index(i + kDi[d], j + kDj[d]);
  return {g.values[static_cast<std::size_t>(q)], g.arms[static_cast<std::size_t>(g.index(i, j))][d] * g.h, q};
}

Vector2d node_gradient(const GridField& g, int i, int j) {
  const double u0 = g.at(i, j);
  const Neighbour e = neighbour(g, i, j, East), w = neighbour(g, i, j, West);
  const Neighbour n = neighbour(g, i, j, North), s = neighbour(g, i, j, South);
  return {central(e.value, u0, w.value, e.dist, w.dist), central(n.value, u0, s.value, n.dist, s.dist)};
}

// Sparse linear combination of nodal values.
struct Linear {
  std::vector<std::pair<int, double>> terms;

  void add(int idx, double v) {
    for (auto& t : terms) {
      if (t.first == idx) {
        t.second += v;
        return;
      }
    }
    terms.emplace_back(idx, v);
  }
  void append(const Linear& o, double s) {
    for (const auto& [q, v] : o.terms) add(q, s * v);
  }
  void scale(double s) {
    for (auto& t : terms) t.second *= s;
  }
  double eval(const GridField& g) const {
    double v = 0.0;
    for (const auto& [q, c] : terms) v += c * g.values[static_cast<std::size_t>(q)];
    return v;
  }
};

// Coefficients of node_gradient component `axis` at (i, j).
Linear gradient_form(const GridField& g, int i, int j, int axis) {
  const int dp = axis == 0 ? East : North, dm = axis == 0 ? West : South;
  const Neighbour p = neighbour(g, i, j, dp), m = neighbour(g, i, j, dm);
  const double den = p.dist * m.dist * (p.dist + m.dist);
  Linear l;
  l.add(p.idx, m.dist * m.dist / den);
  l.add(m.idx, -p.dist * p.dist / den);
  l.add(g.index(i, j), (p.dist * p.dist - m.dist * m.dist) / den);
  return l;
}

// ---------------------------------------------------------------------------
// Local polynomial least squares.

struct LocalFit {
  VectorXd coef;  // monomials xi^a eta^b, a + b <= degree, in scaled coordinates
  std::vector<std::pair<int, int>> powers;
  double h = 1.0;

  double derivative(int a, int b) const {
    for (std::size_t k = 0; k < powers.size(); ++k) {
      if (powers[k].first == a && powers[k].second == b) {
        double fa = 1.0;
        for (int q = 2; q <= a; ++q) fa *= q;
        for (int q = 2; q <= b; ++q) fa *= q;
        return coef(static_cast<Eigen::Index>(k)) * fa / std::pow(h, a + b);
      }
    }
    return 0.0;
  }
};

bool fit_local(const GridField& g, const Vector2d& x0, int degree, double radius, LocalFit& out) {
  out.powers.clear();
  for (int d = 0; d <= degree; ++d) {
    for (int b = 0; b <= d; ++b) out.powers.emplace_back(d - b, b);
  }
  out.h = g.h;
  const int nb = static_cast<int>(out.powers.size());
  std::vector<Vector2d> pts;
  std::vector<double> vals;
  const double r2 = radius * radius;
  auto add = [&](const Vector2d& p, double v) {
    const Vector2d xi = (p - x0) / g.h;
    if (xi.squaredNorm() < r2) {
      pts.push_back(xi);
      vals.push_back(v);
    }
  };
  const Vector2d rel = (x0 - g.origin) / g.h;
  const int ci = static_cast<int>(std::floor(rel.x())), cj = static_cast<int>(std::floor(rel.y()));
  const int reach = static_cast<int>(std::ceil(radius)) + 1;
  for (int j = std::max(0, cj - reach); j <= std::min(g.ny - 1, cj + reach); ++j) {
    for (int i = std::max(0, ci - reach); i <= std::min(g.nx - 1, ci + reach); ++i) {
      const int k = g.index(i, j);
      if (!g.in_omega(k)) continue;
      const Vector2d p = g.node(i, j);
      add(p, g.values[static_cast<std::size_t>(k)]);
      for (int d = 0; d < 4; ++d) {
        const int q = g.index(i + kDi[d], j + kDj[d]);
        if (g.in_omega(q)) continue;
        const double a = g.arms[static_cast<std::size_t>(k)][d];
        add(p + a * g.h * Vector2d(kDi[d], kDj[d]), boundary_value(g.mask[static_cast<std::size_t>(q)]));
      }
    }
  }
  if (static_cast<int>(pts.size()) < nb) return false;
  Eigen::MatrixXd M(static_cast<Eigen::Index>(pts.size()), nb);
  VectorXd rhs(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t r = 0; r < pts.size(); ++r) {
    const double d2 = pts[r].squaredNorm() / r2;
    const double w = std::sqrt(std::pow(1.0 - d2, 3));
    for (int k = 0; k < nb; ++k) {
      M(static_cast<Eigen::Index>(r), k) =
          w * std::pow(pts[r].x(), out.powers[static_cast<std::size_t>(k)].first) *
          std::pow(pts[r].y(), out.powers[static_cast<std::size_t>(k)].second);
    }
    rhs(static_cast<Eigen::Index>(r)) = w * vals[r];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(1e-10);
  if (qr.rank() < nb) return false;
  out.coef = qr.solve(rhs);
  return true;
}

// ---------------------------------------------------------------------------
// Discrete operators.

enum class Path { Semilinear, Divergence, NonDivergence };

struct Context {
  const OperatorSpec* spec = nullptr;
  Path path = Path::Semilinear;
  std::vector<int> uid;  // grid index -> unknown, -1 off Omega
  std::vector<int> node_of;
  bool laplace_only = false;  // plain harmonic system, used for the initial guess
};

Context make_context(const OperatorSpec& spec, const GridField& g) {
  Context c;
  c.spec = &spec;
  switch (spec.kind()) {
    case Kind::LaplaceF: c.path = Path::Semilinear; break;
    case Kind::MeanCurvature:
    case Kind::PLaplace: c.path = Path::Divergence; break;
    default:
      if (spec.quasilinear_form() == nullptr) {
        throw std::invalid_argument("operator '" + spec.name() +
                                    "' has no quasilinear structure; the grid solver handles "
                                    "laplace_f, mean_curvature, p_laplace and quasilinear forms");
      }
      c.path = Path::NonDivergence;
  }
  c.uid.assign(g.mask.size(), -1);
  for (int k = 0; k < static_cast<int>(g.mask.size()); ++k) {
    if (g.in_omega(k)) {
      c.uid[static_cast<std::size_t>(k)] = static_cast<int>(c.node_of.size());
      c.node_of.push_back(k);
    }
  }
  return c;
}

// Face diffusivity k(|Du|^2) and its derivative in |Du|^2.
std::pair<double, double> diffusivity(const OperatorSpec& spec, double grad2) {
  if (spec.kind() == Kind::MeanCurvature) {
    const double k = 1.0 / std::sqrt(1.0 + grad2);
    return {k, -0.5 * k * k * k};
  }
  const auto& pr = spec.params();
  const double m = 0.5 * (pr.p_exponent - 2.0);
  const double b = grad2 + pr.eps_p;
  return {std::pow(b, m), m * std::pow(b, m - 1.0)};
}

struct System {
  SpMat M;
  VectorXd rhs;
  VectorXd diag;
};

// Linearization at the field's current values: M u = rhs. The nonlinear
// residual at those values is M u - rhs.
System assemble(const Context& c, const GridField& g) {
  const int N = static_cast<int>(c.node_of.size());
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(N) * 9);
  System sys;
  sys.rhs = VectorXd::Zero(N);
  sys.diag = VectorXd::Zero(N);
  const auto& f = c.spec->params().f;
  const auto* form = c.spec->quasilinear_form();

  for (int r = 0; r < N; ++r) {
    const int k = c.node_of[static_cast<std::size_t>(r)];
    const int i = k % g.nx, j = k / g.nx;
    const auto& arm = g.arms[static_cast<std::size_t>(k)];
    const auto sw = sw_weights(arm, g.h);
    const double u0 = g.values[static_cast<std::size_t>(k)];
    // Axis second differences scaled by the axis coefficient.
    double axis_coef[2] = {1.0, 1.0};
    double extra_diag = 0.0, rhs = 0.0;

    if (c.laplace_only || c.path == Path::Semilinear) {
      if (!c.laplace_only) {
        const double fp = f.d1(u0);
        extra_diag = -fp;
        rhs = f.value(u0) - fp * u0;
      }
    } else if (c.path == Path::Divergence) {
      // Newton linearization of the flux form: each face gradient is a
      // linear combination of nodal values, so the Jacobian is exact.
      const Linear gx0 = gradient_form(g, i, j, 0), gy0 = gradient_form(g, i, j, 1);
      double R = -f.value(u0);
      Linear jac;
      jac.add(k, -f.d1(u0));
      for (int d = 0; d < 4; ++d) {
        const Neighbour nb = neighbour(g, i, j, d);
        const bool inner = g.in_omega(nb.idx) && arm[d] == 1.0;
        Linear normal;
        normal.add(nb.idx, 1.0 / nb.dist);
        normal.add(k, -1.0 / nb.dist);
        const int tdir = (d == East || d == West) ? 1 : 0;
        Linear tangential = tdir == 1 ? gy0 : gx0;
        const int od = d ^ 1;
        const int opp = g.index(i + kDi[od], j + kDj[od]);
        if (inner) {
          tangential.scale(0.5);
          tangential.append(gradient_form(g, i + kDi[d], j + kDj[d], tdir), 0.5);
        } else if (g.in_omega(opp) && arm[od] == 1.0) {
          // Extrapolate to the face midpoint from the opposite node.
          const double t = 0.5 * arm[d];
          tangential.scale(1.0 + t);
          tangential.append(gradient_form(g, i + kDi[od], j + kDj[od], tdir), -t);
        }
        const double gn = normal.eval(g), gt = tangential.eval(g);
        const auto [kf, dk] = diffusivity(*c.spec, gn * gn + gt * gt);
        const double diff = nb.value - u0;
        R += kf * sw[d] * diff;
        // d/du [sw k(s) (u_d - u0)] = sw k d(u_d - u0) + sw k'(s) (u_d - u0) ds.
        jac.add(nb.idx, sw[d] * kf);
        jac.add(k, -sw[d] * kf);
        jac.append(normal, sw[d] * dk * diff * 2.0 * gn);
        jac.append(tangential, sw[d] * dk * diff * 2.0 * gt);
      }
      double center = 0.0, Mu = 0.0;
      for (const auto& [q, v] : jac.terms) {
        if (!g.in_omega(q) || v == 0.0) continue;
        const int col = c.uid[static_cast<std::size_t>(q)];
        if (col == r) {
          center += v;
        } else {
          trip.emplace_back(r, col, v);
        }
        Mu += v * g.values[static_cast<std::size_t>(q)];
      }
      trip.emplace_back(r, r, center);
      sys.diag(r) = center;
      sys.rhs(r) = Mu - R;
      continue;
    } else {
      const Vector2d p = node_gradient(g, i, j);
      const Vector2d x = g.node(i, j);
      const Eigen::MatrixXd a = form->coefficients(p, u0, x);
      const double a12 = 0.5 * (a(0, 1) + a(1, 0));
      axis_coef[0] = a(0, 0);
      axis_coef[1] = a(1, 1);
      rhs = form->rhs(p, u0, x);
      bool implicit_mixed = g.mask[static_cast<std::size_t>(k)] == NodeType::Interior;
      int diag_idx[4] = {g.index(i + 1, j + 1), g.index(i - 1, j - 1), g.index(i - 1, j + 1),
                         g.index(i + 1, j - 1)};
      for (int q : diag_idx) implicit_mixed = implicit_mixed && g.in_omega(q);
      if (a12 != 0.0) {
        if (implicit_mixed) {
          const double m = 2.0 * a12 / (4.0 * g.h * g.h);
          const double sgn[4] = {1.0, 1.0, -1.0, -1.0};
          for (int q = 0; q < 4; ++q) {
            trip.emplace_back(r, c.uid[static_cast<std::size_t>(diag_idx[q])], sgn[q] * m);
          }
        } else {
          LocalFit fit;
          double uxy = 0.0;
          if (fit_local(g, x, 2, 2.5, fit) || fit_local(g, x, 2, 3.5, fit)) uxy = fit.derivative(1, 1);
          rhs -= 2.0 * a12 * uxy;
        }
      }
    }

    double center = extra_diag;
    for (int axis = 0; axis < 2; ++axis) {
      std::vector<StencilTerm> terms;
      center += axis_coef[axis] * axis_second_difference(g, i, j, axis, terms);
      for (const auto& t : terms) {
        const double wt = axis_coef[axis] * t.w;
        if (g.in_omega(t.idx)) {
          trip.emplace_back(r, c.uid[static_cast<std::size_t>(t.idx)], wt);
        } else {
          rhs -= wt * g.values[static_cast<std::size_t>(t.idx)];
        }
      }
    }
    trip.emplace_back(r, r, center);
    sys.diag(r) = center;
    sys.rhs(r) = rhs;
  }
  sys.M.resize(N, N);
  sys.M.setFromTriplets(trip.begin(), trip.end());
  return sys;
}

VectorXd unknowns(const Context& c, const GridField& g) {
  VectorXd u(static_cast<Eigen::Index>(c.node_of.size()));
  for (std::size_t r = 0; r < c.node_of.size(); ++r) {
    u(static_cast<Eigen::Index>(r)) = g.values[static_cast<std::size_t>(c.node_of[r])];
  }
  return u;
}

void scatter(const Context& c, const VectorXd& u, GridField& g) {
  for (std::size_t r = 0; r < c.node_of.size(); ++r) {
    g.values[static_cast<std::size_t>(c.node_of[r])] = u(static_cast<Eigen::Index>(r));
  }
}

double scaled_residual(const System& s, const VectorXd& u) {
  const VectorXd R = s.M * u - s.rhs;
  double m = 0.0;
  for (Eigen::Index r = 0; r < R.size(); ++r) m = std::max(m, std::abs(R(r) / s.diag(r)));
  return m;
}

VectorXd linear_solve(const System& s, const VectorXd& guess) {
  // Row scaling by the diagonal keeps the preconditioner well balanced.
  const VectorXd inv = s.diag.cwiseInverse();
  const SpMat A = inv.asDiagonal() * s.M;
  const VectorXd b = inv.cwiseProduct(s.rhs);
  Eigen::BiCGSTAB<SpMat, Eigen::IncompleteLUT<double>> it;
  it.preconditioner().setDroptol(1e-5);
  it.preconditioner().setFillfactor(20);
  it.setTolerance(1e-13);
  it.setMaxIterations(4000);
  it.compute(A);
  if (it.info() == Eigen::Success) {
    VectorXd x = it.solveWithGuess(b, guess);
    if (it.info() == Eigen::Success && (A * x - b).norm() <= 1e-10 * std::max(1.0, b.norm())) return x;
  }
  Eigen::SparseLU<SpMat> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw ConvergenceError("sparse factorization failed");
  return lu.solve(b);
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<BoundaryPoint> GridField::boundary_points() const {
  std::vector<BoundaryPoint> out;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int k = index(i, j);
      if (!in_omega(k)) continue;
      for (int d = 0; d < 4; ++d) {
        const int q = index(i + kDi[d], j + kDj[d]);
        if (in_omega(q)) continue;
        out.push_back({node(i, j) + arms[static_cast<std::size_t>(k)][d] * h * Vector2d(kDi[d], kDj[d]),
                       boundary_value(mask[static_cast<std::size_t>(q)])});
      }
    }
  }
  return out;
}

double GridField::min_gradient_norm() const {
  double m = std::numeric_limits<double>::infinity();
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      if (in_omega(index(i, j))) m = std::min(m, node_gradient(*this, i, j).norm());
    }
  }
  return m;
}

GridField build_grid(const RingDomain2D& dom, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grid spacing must be positive");
  dom.validate(2.0 * h);
  GridField g;
  g.h = h;
  g.domain = dom;
  const auto [lo, hi] = dom.outer.bounds();
  g.origin = lo - Vector2d::Constant(2.0 * h);
  g.nx = static_cast<int>(std::ceil((hi.x() - lo.x()) / h)) + 5;
  g.ny = static_cast<int>(std::ceil((hi.y() - lo.y()) / h)) + 5;
  const std::size_t total = static_cast<std::size_t>(g.nx) * static_cast<std::size_t>(g.ny);
  std::vector<NodeType> raw(total);
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const Vector2d x = g.node(i, j);
      NodeType t = NodeType::Interior;
      if (!dom.outer.inside(x)) {
        t = NodeType::Exterior;
      } else if (!(dom.inner.level(x) > 0.0)) {
        t = NodeType::Hole;
      }
      raw[static_cast<std::size_t>(g.index(i, j))] = t;
    }
  }

  auto crossing = [&](int i, int j, int d) {
    const Vector2d p = g.node(i, j), q = g.node(i + kDi[d], j + kDj[d]);
    const NodeType t = raw[static_cast<std::size_t>(g.index(i + kDi[d], j + kDj[d]))];
    if (t == NodeType::Exterior) return dom.outer.crossing_fraction(p, q);
    return 1.0 - dom.inner.crossing_fraction(q, p);
  };

  // Nodes within 1e-8 h of the boundary become boundary nodes themselves.
  g.mask = raw;
  for (int j = 1; j + 1 < g.ny; ++j) {
    for (int i = 1; i + 1 < g.nx; ++i) {
      const std::size_t k = static_cast<std::size_t>(g.index(i, j));
      if (raw[k] != NodeType::Interior) continue;
      for (int d = 0; d < 4; ++d) {
        const NodeType t = raw[static_cast<std::size_t>(g.index(i + kDi[d], j + kDj[d]))];
        if (t == NodeType::Interior) continue;
        if (crossing(i, j, d) < 1e-8) {
          g.mask[k] = t;
          break;
        }
      }
    }
  }

  g.values.assign(total, 0.0);
  g.arms.assign(total, {1.0, 1.0, 1.0, 1.0});
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = static_cast<std::size_t>(g.index(i, j));
      if (!g.in_omega(static_cast<int>(k))) {
        g.values[k] = boundary_value(g.mask[k]);
        continue;
      }
      bool near = false;
      for (int d = 0; d < 4; ++d) {
        const std::size_t q = static_cast<std::size_t>(g.index(i + kDi[d], j + kDj[d]));
        if (g.in_omega(static_cast<int>(q))) continue;
        near = true;
        g.arms[k][d] = raw[q] == NodeType::Interior ? 1.0 : crossing(i, j, d);
      }
      if (near) g.mask[k] = NodeType::NearBoundary;
    }
  }
  return g;
}

double discrete_residual(const OperatorSpec& spec, const GridField& g) {
  const Context c = make_context(spec, g);
  const System s = assemble(c, g);
  return scaled_residual(s, unknowns(c, g));
}

GridField solve(const OperatorSpec& spec, const RingDomain2D& dom, double h, double tol,
                int max_iter) {
  if (spec.dim() != 2) throw std::invalid_argument("grid solves are two-dimensional");
  GridField g = build_grid(dom, h);
  g.operator_name = spec.name();
  Context c = make_context(spec, g);

  // Harmonic initial guess.
  c.laplace_only = true;
  System s = assemble(c, g);
  scatter(c, linear_solve(s, unknowns(c, g)), g);
  c.laplace_only = false;

  s = assemble(c, g);
  VectorXd u = unknowns(c, g);
  double res = scaled_residual(s, u);
  for (int it = 1; it <= max_iter; ++it) {
    const VectorXd target = linear_solve(s, u);
    VectorXd cand = target;
    System next;
    double next_res = 0.0;
    double lambda = 1.0;
    for (int halving = 0;; ++halving) {
      cand = u + lambda * (target - u);
      scatter(c, cand, g);
      next = assemble(c, g);
      next_res = scaled_residual(next, cand);
      if (c.path == Path::NonDivergence || next_res <= res || halving == 8) break;
      lambda *= 0.5;
    }
    const double update = (cand - u).cwiseAbs().maxCoeff();
    g.log.push_back({it, update, next_res});
    u = cand;
    s = std::move(next);
    res = next_res;
    if (update < tol) {
      g.final_residual = res;
      return g;
    }
  }
  std::ostringstream os;
  os << "solver for '" << spec.name() << "' did not converge in " << max_iter
     << " iterations (last update " << g.log.back().update << ", residual " << res << ")";
  throw ConvergenceError(os.str());
}

// ---------------------------------------------------------------------------
// Analytic fields.

namespace {

double potential(double s, int m, int order) {
  if (!(s > 0.0)) throw DomainError("radial potential evaluated at the axis");
  if (m == 2) {
    switch (order) {
      case 0: return 0.5 * std::log(2.0 * s);
      case 1: return 0.5 / s;
      case 2: return -0.5 / (s * s);
      default: return 1.0 / (s * s * s);
    }
  }
  const double q = (2.0 - m) / 2.0;
  double coef = 1.0;
  for (int k = 0; k < order; ++k) coef *= 2.0 * (q - k);
  return coef * std::pow(2.0 * s, q - order);
}

void check_radii(double r_inner, double r_outer) {
  if (!(r_inner > 0.0) || !(r_outer > r_inner)) {
    throw std::invalid_argument("radial field needs 0 < r_inner < r_outer");
  }
}

}  // namespace

AnalyticField AnalyticField::harmonic_annulus(int n, double r_inner, double r_outer) {
  if (n < 2) throw std::invalid_argument("dimension must be at least 2");
  check_radii(r_inner, r_outer);
  AnalyticField f;
  f.kind_ = Kind::HarmonicAnnulus;
  f.n_ = f.m_ = n;
  f.r_inner_ = r_inner;
  f.r_outer_ = r_outer;
  const double pin = potential(0.5 * r_inner * r_inner, n, 0);
  const double pout = potential(0.5 * r_outer * r_outer, n, 0);
  f.c2_ = 1.0 / (pin - pout);
  f.c3_ = -f.c2_ * pout;
  return f;
}

AnalyticField AnalyticField::radial_poisson(int n, double c, double r_inner, double r_outer) {
  AnalyticField f = harmonic_annulus(n, r_inner, r_outer);
  f.kind_ = Kind::RadialPoisson;
  const double sin = 0.5 * r_inner * r_inner, sout = 0.5 * r_outer * r_outer;
  const double pin = potential(sin, n, 0), pout = potential(sout, n, 0);
  f.c1_ = c / n;
  f.c2_ = (1.0 - f.c1_ * (sin - sout)) / (pin - pout);
  f.c3_ = -f.c1_ * sout - f.c2_ * pout;
  return f;
}

AnalyticField AnalyticField::sphere(int n) {
  if (n < 2) throw std::invalid_argument("dimension must be at least 2");
  AnalyticField f;
  f.kind_ = Kind::Sphere;
  f.n_ = f.m_ = n;
  f.c1_ = -1.0;
  return f;
}

AnalyticField AnalyticField::ellipsoidal(VectorXd semi_axes) {
  if (semi_axes.size() < 2 || !(semi_axes.minCoeff() > 0.0)) {
    throw std::invalid_argument("ellipsoidal field needs at least two positive semi-axes");
  }
  AnalyticField f;
  f.kind_ = Kind::Ellipsoidal;
  f.n_ = f.m_ = static_cast<int>(semi_axes.size());
  f.axes_ = std::move(semi_axes);
  return f;
}

AnalyticField AnalyticField::cylinder_annulus(double r_inner, double r_outer) {
  AnalyticField f = harmonic_annulus(2, r_inner, r_outer);
  f.kind_ = Kind::CylinderAnnulus;
  f.n_ = 3;
  return f;
}

std::string AnalyticField::describe() const {
  std::ostringstream os;
  switch (kind_) {
    case Kind::HarmonicAnnulus:
      os << "harmonic_annulus(n=" << n_ << ", R1=" << r_inner_ << ", R0=" << r_outer_ << ")";
      break;
    case Kind::RadialPoisson:
      os << "radial_poisson(n=" << n_ << ", c=" << c1_ * n_ << ", R1=" << r_inner_
         << ", R0=" << r_outer_ << ")";
      break;
    case Kind::Sphere: os << "sphere(n=" << n_ << ")"; break;
    case Kind::Ellipsoidal: os << "ellipsoidal(n=" << n_ << ")"; break;
    case Kind::CylinderAnnulus:
      os << "cylinder_annulus(R1=" << r_inner_ << ", R0=" << r_outer_ << ")";
      break;
  }
  return os.str();
}

double AnalyticField::G(double s, int order) const {
  double v = c2_ != 0.0 ? c2_ * potential(s, m_, order) : 0.0;
  if (order == 0) v += c1_ * s + c3_;
  if (order == 1) v += c1_;
  return v;
}

double AnalyticField::value(const VectorXd& x) const {
  if (x.size() != n_) throw std::invalid_argument("point dimension mismatch");
  if (kind_ == Kind::Ellipsoidal) return -(x.array() / axes_.array()).square().sum();
  return G(0.5 * x.head(m_).squaredNorm(), 0);
}

Jet3 AnalyticField::jet(const VectorXd& x) const {
  if (x.size() != n_) throw std::invalid_argument("point dimension mismatch");
  const int n = n_;
  Jet3 j;
  j.x = x;
  j.grad = VectorXd::Zero(n);
  j.hess = Eigen::MatrixXd::Zero(n, n);
  j.third.assign(static_cast<std::size_t>(n * n * n), 0.0);
  if (kind_ == Kind::Ellipsoidal) {
    j.u = value(x);
    for (int i = 0; i < n; ++i) {
      const double a2 = axes_(i) * axes_(i);
      j.grad(i) = -2.0 * x(i) / a2;
      j.hess(i, i) = -2.0 / a2;
    }
    return j;
  }
  VectorXd y = VectorXd::Zero(n);
  y.head(m_) = x.head(m_);
  auto dl = [&](int a, int b) { return (a == b && a < m_) ? 1.0 : 0.0; };
  const double s = 0.5 * y.squaredNorm();
  const double g1 = G(s, 1), g2 = G(s, 2), g3 = G(s, 3);
  j.u = G(s, 0);
  for (int a = 0; a < n; ++a) {
    j.grad(a) = g1 * y(a);
    for (int b = 0; b < n; ++b) {
      j.hess(a, b) = g2 * y(a) * y(b) + g1 * dl(a, b);
      for (int c = 0; c < n; ++c) {
        j.third[static_cast<std::size_t>((a * n + b) * n + c)] =
            g3 * y(a) * y(b) * y(c) + g2 * (dl(a, c) * y(b) + dl(b, c) * y(a) + dl(a, b) * y(c));
      }
    }
  }
  return j;
}

std::vector<VectorXd> AnalyticField::level_points(double c, int count) const {
  if (count < 1) throw std::invalid_argument("level_points needs a positive count");
  double radius = 0.0;
  VectorXd scale = VectorXd::Ones(m_);
  if (kind_ == Kind::Ellipsoidal || kind_ == Kind::Sphere) {
    if (!(c < 0.0)) throw std::invalid_argument("levels of this field are negative");
    if (kind_ == Kind::Sphere) {
      radius = std::sqrt(-2.0 * c);
    } else {
      radius = std::sqrt(-c);
      scale = axes_;
    }
  } else {
    double lo = 0.5 * r_inner_ * r_inner_, hi = 0.5 * r_outer_ * r_outer_;
    double flo = G(lo, 0) - c, fhi = G(hi, 0) - c;
    if (flo * fhi > 0.0) throw std::invalid_argument("level outside the field's range");
    for (int it = 0; it < 200 && hi - lo > 1e-16 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double fm = G(mid, 0) - c;
      if ((fm < 0.0) == (flo < 0.0)) {
        lo = mid;
        flo = fm;
      } else {
        hi = mid;
      }
    }
    radius = std::sqrt(2.0 * (0.5 * (lo + hi)));
  }

  std::vector<VectorXd> pts;
  pts.reserve(static_cast<std::size_t>(count));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::mt19937_64 rng(0);
  std::normal_distribution<double> N01;
  for (int k = 0; k < count; ++k) {
    VectorXd p = VectorXd::Zero(n_);
    VectorXd dir(m_);
    if (m_ == 2) {
      const double th = 2.0 * std::numbers::pi * k / count;
      dir << std::cos(th), std::sin(th);
    } else if (m_ == 3) {
      const double z = 1.0 - 2.0 * (k + 0.5) / count;
      const double rr = std::sqrt(1.0 - z * z);
      dir << rr * std::cos(golden * k), rr * std::sin(golden * k), z;
    } else {
      for (int q = 0; q < m_; ++q) dir(q) = N01(rng);
      dir.normalize();
    }
    p.head(m_) = radius * scale.cwiseProduct(dir);
    if (kind_ == Kind::CylinderAnnulus) p(2) = -1.0 + 2.0 * (k + 0.5) / count;
    pts.push_back(p);
  }
  return pts;
}

GridField sample_to_grid(const AnalyticField& f, const RingDomain2D& dom, double h) {
  if (f.dim() != 2) throw std::invalid_argument("only planar fields can be sampled to a grid");
  GridField g = build_grid(dom, h);
  g.operator_name = f.describe();
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int k = g.index(i, j);
      if (g.in_omega(k)) g.values[static_cast<std::size_t>(k)] = f.value(g.node(i, j));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Field evaluation.

Jet3 field_jet(const GridField& g, const Vector2d& x) {
  if (!g.domain.contains(x) || g.domain.boundary_distance(x) < kJetMargin * g.h) {
    std::ostringstream os;
    os << "jet at (" << x.x() << ", " << x.y() << ") refused: closer than " << kJetMargin
       << " h to the boundary or outside the domain";
    throw ExtrapolationRefused(os.str());
  }
  LocalFit fit;
  if (!fit_local(g, x, 4, 3.2, fit)) throw ExtrapolationRefused("local fit is rank deficient");
  Jet3 j;
  j.x = x;
  j.u = fit.derivative(0, 0);
  j.grad = Vector2d(fit.derivative(1, 0), fit.derivative(0, 1));
  j.hess.resize(2, 2);
  j.hess << fit.derivative(2, 0), fit.derivative(1, 1), fit.derivative(1, 1), fit.derivative(0, 2);
  j.third.resize(8);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 2; ++c) {
        const int ny = a + b + c;
        j.third[static_cast<std::size_t>((a * 2 + b) * 2 + c)] = fit.derivative(3 - ny, ny);
      }
    }
  }
  return j;
}

double field_value(const GridField& g, const Vector2d& x) {
  if (!g.domain.contains(x) && g.domain.boundary_distance(x) > 1e-9 * g.h) {
    throw ExtrapolationRefused("value requested outside the closed domain");
  }
  LocalFit fit;
  if (fit_local(g, x, 4, 3.2, fit) || fit_local(g, x, 2, 3.2, fit)) return fit.derivative(0, 0);
  throw ExtrapolationRefused("local fit is rank deficient");
}

// ---------------------------------------------------------------------------
// Serialization.

namespace {

void check_match(const GridField& built, int nx, int ny, double h, double ox, double oy) {
  if (built.nx != nx || built.ny != ny || built.h != h ||
      std::abs(built.origin.x() - ox) > 1e-12 || std::abs(built.origin.y() - oy) > 1e-12) {
    throw std::runtime_error("field file grid does not match the configured domain");
  }
}

}  // namespace

void write_csv(const GridField& g, const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "w");
  if (fp == nullptr) throw std::runtime_error("cannot write " + path);
  std::fprintf(fp, "nx,ny,h,origin_x,origin_y\n%d,%d,%.17g,%.17g,%.17g\ni,j,mask,value\n", g.nx,
               g.ny, g.h, g.origin.x(), g.origin.y());
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      std::fprintf(fp, "%d,%d,%d,%.17g\n", i, j, static_cast<int>(g.mask[static_cast<std::size_t>(g.index(i, j))]),
                   g.at(i, j));
    }
  }
  std::fclose(fp);
}

GridField read_csv(const std::string& path, const RingDomain2D& dom) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  int nx = 0, ny = 0;
  double h = 0, ox = 0, oy = 0;
  std::getline(in, line);
  if (line != "nx,ny,h,origin_x,origin_y" || !std::getline(in, line) ||
      std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &nx, &ny, &h, &ox, &oy) != 5) {
    throw std::runtime_error("malformed field header in " + path);
  }
  GridField g = build_grid(dom, h);
  check_match(g, nx, ny, h, ox, oy);
  std::getline(in, line);
  const std::size_t total = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
  for (std::size_t r = 0; r < total; ++r) {
    int i = 0, j = 0, m = 0;
    double v = 0.0;
    if (!std::getline(in, line) || std::sscanf(line.c_str(), "%d,%d,%d,%lf", &i, &j, &m, &v) != 4 ||
        i < 0 || j < 0 || i >= nx || j >= ny) {
      throw std::runtime_error("malformed field row in " + path);
    }
    const std::size_t k = static_cast<std::size_t>(g.index(i, j));
    if (static_cast<int>(g.mask[k]) != m) throw std::runtime_error("field mask does not match the domain");
    g.values[k] = v;
  }
  return g;
}

void write_binary(const GridField& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  const std::int32_t dims[2] = {g.nx, g.ny};
  const double geo[3] = {g.h, g.origin.x(), g.origin.y()};
  out.write("QCFD", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(geo), sizeof geo);
  out.write(reinterpret_cast<const char*>(g.mask.data()), static_cast<std::streamsize>(g.mask.size()));
  out.write(reinterpret_cast<const char*>(g.values.data()),
            static_cast<std::streamsize>(g.values.size() * sizeof(double)));
}

GridField read_binary(const std::string& path, const RingDomain2D& dom) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  char magic[4];
  std::int32_t dims[2];
  double geo[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  in.read(reinterpret_cast<char*>(geo), sizeof geo);
  if (!in || std::memcmp(magic, "QCFD", 4) != 0) throw std::runtime_error("not a field file: " + path);
  GridField g = build_grid(dom, geo[0]);
  check_match(g, dims[0], dims[1], geo[0], geo[1], geo[2]);
  std::vector<NodeType> mask(g.mask.size());
  in.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
  in.read(reinterpret_cast<char*>(g.values.data()),
          static_cast<std::streamsize>(g.values.size() * sizeof(double)));
  if (!in) throw std::runtime_error("truncated field file: " + path);
  if (mask != g.mask) throw std::runtime_error("field mask does not match the domain");
  return g;
}

}  // namespace qconv::pdesolve
