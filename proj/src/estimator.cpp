#include "qconv/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "qconv/error.hpp"

namespace qconv::estimator {

namespace {


constexpr double kLevelTol = 1e-8;
// Projection target; kept below kLevelTol so the invariant has headroom.
constexpr double kProjectTol = 1e-11;

std::string level_name(double c) {
  std::ostringstream os;
  os << "level c=" << c;
  return os.str();
}

void check_level(double c, const ExtractOptions& opt) {
  if (!(c >= opt.c_min - 1e-12 && c <= opt.c_max + 1e-12)) {
    std::ostringstream os;
    os << level_name(c) << " outside [" << opt.c_min << ", " << opt.c_max
       << "]; boundary levels come from the boundary curves";
    throw LevelRangeError(os.str());
  }
}

// Grid edge crossing of the level, or nullopt.
std::optional<Vector2d> edge_crossing(const GridField& g, int i0, int j0, int i1, int j1, double c) {
  const int a = g.index(i0, j0), b = g.index(i1, j1);
  const bool ia = g.in_omega(a), ib = g.in_omega(b);
  if (!ia && !ib) return std::nullopt;
  Vector2d pa = g.node(i0, j0), pb = g.node(i1, j1);
  double va = g.values[static_cast<std::size_t>(a)], vb = g.values[static_cast<std::size_t>(b)];
  auto arm_index = [](int di, int dj) {
    if (di == 1) return 0;
    if (di == -1) return 1;
    return dj == 1 ? 2 : 3;
  };
  if (!ib) {
    pb = pa + g.arms[static_cast<std::size_t>(a)][arm_index(i1 - i0, j1 - j0)] * (pb - pa);
  } else if (!ia) {
    pa = pb + g.arms[static_cast<std::size_t>(b)][arm_index(i0 - i1, j0 - j1)] * (pa - pb);
  }
  if ((va > c) == (vb > c)) return std::nullopt;
  const double t = (c - va) / (vb - va);
  return pa + t * (pb - pa);
}

struct Polyline {
  std::vector<Vector2d> pts;
};

double signed_area(const std::vector<Vector2d>& p) {
  double a = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Vector2d& u = p[k];
    const Vector2d& v = p[(k + 1) % p.size()];
    a += u.x() * v.y() - u.y() * v.x();
  }
  return 0.5 * a;
}

int winding_number(const std::vector<Vector2d>& p, const Vector2d& o) {
  double total = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const Vector2d u = p[k] - o, v = p[(k + 1) % p.size()] - o;
    total += std::atan2(u.x() * v.y() - u.y() * v.x(), u.dot(v));
  }
  return static_cast<int>(std::lround(total / (2.0 * std::numbers::pi)));
}

std::vector<Polyline> marching_squares(const GridField& g, double c) {
  auto H = [&](int i, int j) { return 2L * g.index(i, j); };
  auto V = [&](int i, int j) { return 2L * g.index(i, j) + 1; };
  std::unordered_map<long, Vector2d> point;
  std::vector<std::pair<long, long>> segs;
  for (int j = 0; j + 1 < g.ny; ++j) {
    for (int i = 0; i + 1 < g.nx; ++i) {
      const double v[4] = {g.at(i, j), g.at(i + 1, j), g.at(i + 1, j + 1), g.at(i, j + 1)};
      const bool s[4] = {v[0] > c, v[1] > c, v[2] > c, v[3] > c};
      if (s[0] == s[1] && s[1] == s[2] && s[2] == s[3]) continue;
      // Edges: bottom, right, top, left.
      const long id[4] = {H(i, j), V(i + 1, j), H(i, j + 1), V(i, j)};
      const int ends[4][4] = {{i, j, i + 1, j}, {i + 1, j, i + 1, j + 1}, {i, j + 1, i + 1, j + 1}, {i, j, i, j + 1}};
      std::vector<int> cut;
      for (int e = 0; e < 4; ++e) {
        auto p = edge_crossing(g, ends[e][0], ends[e][1], ends[e][2], ends[e][3], c);
        if (p) {
          point[id[e]] = *p;
          cut.push_back(e);
        }
      }
      if (cut.size() == 2) {
        segs.emplace_back(id[cut[0]], id[cut[1]]);
      } else if (cut.size() == 4) {
        const bool centre = 0.25 * (v[0] + v[1] + v[2] + v[3]) > c;
        if (s[0] != centre) {
          segs.emplace_back(id[3], id[0]);
          segs.emplace_back(id[1], id[2]);
        } else {
          segs.emplace_back(id[0], id[1]);
          segs.emplace_back(id[2], id[3]);
        }
      }
    }
  }

  std::unordered_map<long, std::vector<std::size_t>> at_edge;
  for (std::size_t k = 0; k < segs.size(); ++k) {
    at_edge[segs[k].first].push_back(k);
    at_edge[segs[k].second].push_back(k);
  }
  for (const auto& [e, ss] : at_edge) {
    if (ss.size() != 2) throw LevelRangeError(level_name(c) + " has an open curve");
  }
  std::vector<bool> used(segs.size(), false);
  std::vector<Polyline> loops;
  for (std::size_t start = 0; start < segs.size(); ++start) {
    if (used[start]) continue;
    Polyline pl;
    std::size_t cur = start;
    long edge = segs[start].first;
    while (!used[cur]) {
      used[cur] = true;
      pl.pts.push_back(point[edge]);
      edge = segs[cur].first == edge ? segs[cur].second : segs[cur].first;
      const auto& ss = at_edge[edge];
      cur = ss[0] == cur ? ss[1] : ss[0];
    }
    loops.push_back(std::move(pl));
  }
  return loops;
}

std::vector<Vector2d> resample(const std::vector<Vector2d>& p, double spacing, double& length) {
  const std::size_t m = p.size();
  std::vector<double> cum(m + 1, 0.0);
  for (std::size_t k = 0; k < m; ++k) cum[k + 1] = cum[k] + (p[(k + 1) % m] - p[k]).norm();
  length = cum[m];
  const int N = std::max(16, static_cast<int>(std::ceil(length / spacing)));
  std::vector<Vector2d> out;
  out.reserve(static_cast<std::size_t>(N));
  std::size_t seg = 0;
  for (int k = 0; k < N; ++k) {
    const double s = length * k / N;
    while (seg + 1 < m && cum[seg + 1] < s) ++seg;
    const double L = cum[seg + 1] - cum[seg];
    const double t = L > 0.0 ? (s - cum[seg]) / L : 0.0;
    out.push_back(p[seg] + t * (p[(seg + 1) % m] - p[seg]));
  }
  return out;
}

// Newton along the gradient with step halving; returns the jet at the
// projected point.
Jet3 project(const GridField& g, Vector2d x, double c) {
  Jet3 j = pdesolve::field_jet(g, x);
  for (int it = 0; it < 40 && std::abs(j.u - c) > kProjectTol; ++it) {
    const double g2 = j.grad.squaredNorm();
    if (!(g2 > 0.0)) throw DegenerateGradient("vanishing gradient while projecting onto the level");
    const Vector2d step = -(j.u - c) * j.grad / g2;
    double lam = 1.0;
    for (int half = 0; half < 30; ++half, lam *= 0.5) {
      const Jet3 t = pdesolve::field_jet(g, x + lam * step);
      if (std::abs(t.u - c) < std::abs(j.u - c)) {
        x += lam * step;
        j = t;
        break;
      }
    }
  }
  return j;
}

LevelPoint make_point(const Jet3& j, double d0) {
  LevelPoint p;
  p.x = j.x;
  p.jet = j;
  if (j.grad.norm() < d0) {
    p.gradient_ok = false;
    return p;
  }
  p.curvature = levelgeom::curvature_sample(j, std::nullopt, d0);
  return p;
}

void summarize(LevelSetSample& s) {
  s.kappa_min = std::numeric_limits<double>::infinity();
  s.min_grad = std::numeric_limits<double>::infinity();
  s.gradient_ok = true;
  for (const auto& cv : s.curves) {
    for (const auto& p : cv.points) {
      s.max_level_error = std::max(s.max_level_error, std::abs(p.jet.u - s.c));
      s.min_grad = std::min(s.min_grad, p.jet.grad.norm());
      if (!p.gradient_ok) {
        s.gradient_ok = false;
        continue;
      }
      if (p.curvature.kappa_s < s.kappa_min) {
        s.kappa_min = p.curvature.kappa_s;
        s.kappa_argmin = p.x;
      }
    }
  }
}

std::vector<const LevelPoint*> usable_points(const LevelSetSample& s) {
  std::vector<const LevelPoint*> out;
  for (const auto& cv : s.curves) {
    for (const auto& p : cv.points) {
      if (p.gradient_ok) out.push_back(&p);
    }
  }
  return out;
}

void check_profile_constants(double lambda, double varpi) {
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  if (!(varpi >= 0.0)) throw std::invalid_argument("varpi must be nonnegative");
}

}  // namespace

std::vector<double> default_levels() {
  std::vector<double> c;
  for (int k = 1; k <= 19; ++k) c.push_back(k / 20.0);
  return c;
}

std::size_t LevelSetSample::point_count() const {
  std::size_t n = 0;
  for (const auto& cv : curves) n += cv.points.size();
  return n;
}

LevelSetSample extract_level(const GridField& g, double c, const ExtractOptions& opt) {
  check_level(c, opt);
  LevelSetSample s;
  s.c = c;
  s.spacing = opt.spacing > 0.0 ? opt.spacing : 0.5 * g.h;
  const auto loops = marching_squares(g, c);
  if (loops.empty()) throw LevelRangeError(level_name(c) + " is empty");
  try {
    for (const auto& loop : loops) {
      std::vector<Vector2d> pts = loop.pts;
      if (signed_area(pts) < 0.0) std::reverse(pts.begin(), pts.end());
      LevelCurve cv;
      cv.winding = winding_number(pts, g.domain.inner.center());
      const auto samples = resample(pts, s.spacing, cv.length);
      for (const Vector2d& x : samples) cv.points.push_back(make_point(project(g, x, c), opt.d0));
      s.curves.push_back(std::move(cv));
    }
  } catch (const ExtrapolationRefused& e) {
    throw LevelRangeError(level_name(c) + " runs too close to the boundary at this h: " + e.what());
  }
  summarize(s);

  if (opt.refine_argmin && std::isfinite(s.kappa_min)) {
    for (const auto& cv : s.curves) {
      const std::size_t m = cv.points.size();
      std::size_t k = m;
      for (std::size_t q = 0; q < m; ++q) {
        if (cv.points[q].gradient_ok && cv.points[q].x == s.kappa_argmin) k = q;
      }
      if (k == m) continue;
      const Vector2d prev = cv.points[(k + m - 1) % m].x, next = cv.points[(k + 1) % m].x;
      const Vector2d mid = cv.points[k].x;
      auto eval = [&](double t) {
        const Vector2d x = t < 0.0 ? mid + (-t) * (prev - mid) : mid + t * (next - mid);
        try {
          const LevelPoint p = make_point(project(g, x, c), opt.d0);
          return p.gradient_ok ? p.curvature.kappa_s : std::numeric_limits<double>::infinity();
        } catch (const std::exception&) {
          return std::numeric_limits<double>::infinity();
        }
      };
      const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
      double a = -1.0, b = 1.0;
      double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
      double f1 = eval(x1), f2 = eval(x2);
      for (int it = 0; it < 24; ++it) {
        if (f1 < f2) {
          b = x2;
          x2 = x1;
          f2 = f1;
          x1 = b - gr * (b - a);
          f1 = eval(x1);
        } else {
          a = x1;
          x1 = x2;
          f1 = f2;
          x2 = a + gr * (b - a);
          f2 = eval(x2);
        }
      }
      const double tbest = f1 < f2 ? x1 : x2;
      const double fbest = std::min(f1, f2);
      if (fbest < s.kappa_min) {
        s.kappa_min = fbest;
        s.kappa_argmin = tbest < 0.0 ? Vector2d(mid + (-tbest) * (prev - mid)) : Vector2d(mid + tbest * (next - mid));
      }
      break;
    }
  }
  if (s.max_level_error > kLevelTol) {
    throw ConvergenceError(level_name(c) + " projection missed the level tolerance");
  }
  return s;
}

LevelSetSample analytic_level(const AnalyticField& f, double c, int count, const ExtractOptions& opt) {
  LevelSetSample s;
  s.c = c;
  LevelCurve cv;
  const auto pts = f.level_points(c, count);
  for (const auto& x : pts) cv.points.push_back(make_point(f.jet(x), opt.d0));
  if (f.dim() == 2) {
    std::vector<Vector2d> p2;
    for (const auto& x : pts) p2.emplace_back(x(0), x(1));
    for (std::size_t k = 0; k < p2.size(); ++k) cv.length += (p2[(k + 1) % p2.size()] - p2[k]).norm();
    cv.winding = winding_number(p2, Vector2d::Zero());
    s.spacing = cv.length / count;
  }
  s.curves.push_back(std::move(cv));
  summarize(s);
  return s;
}

namespace {

LevelSummary summary_of(const LevelSetSample& s) {
  LevelSummary l;
  l.c = s.c;
  l.kappa = s.kappa_min;
  l.min_grad = s.min_grad;
  l.rank = std::numeric_limits<int>::max();
  for (const LevelPoint* p : usable_points(s)) l.rank = std::min(l.rank, p->curvature.rank);
  if (!s.gradient_ok) {
    l.flagged = true;
    l.flag = "gradient below d0 on the level";
  }
  if (l.rank == std::numeric_limits<int>::max()) {
    l.rank = 0;
    l.flagged = true;
    l.flag = "no usable points";
  }
  return l;
}

}  // namespace

KappaProfile kappa_profile(const GridField& g, const std::vector<double>& levels,
                           const ExtractOptions& opt) {
  KappaProfile p;
  p.kappa0 = g.domain.outer.min_curvature();
  p.kappa1 = g.domain.inner.min_curvature();
  for (double c : levels) {
    try {
      p.levels.push_back(summary_of(extract_level(g, c, opt)));
    } catch (const std::runtime_error& e) {
      LevelSummary l;
      l.c = c;
      l.flagged = true;
      l.flag = e.what();
      p.levels.push_back(l);
    }
  }
  return p;
}

KappaProfile kappa_profile(const AnalyticField& f, const std::vector<double>& levels, int count,
                           const ExtractOptions& opt) {
  KappaProfile p;
  using K = AnalyticField::Kind;
  if (f.kind() == K::HarmonicAnnulus || f.kind() == K::RadialPoisson) {
    p.kappa0 = 1.0 / f.r_outer();
    p.kappa1 = 1.0 / f.r_inner();
  }
  for (double c : levels) p.levels.push_back(summary_of(analytic_level(f, c, count, opt)));
  return p;
}

double bound_rhs(const KappaProfile& p, double c, double A) {
  double r = std::min(p.kappa0 * std::exp(A * c), p.kappa1 * std::exp(A * (c - 1.0)));
  if (p.varpi > 0.0) r = std::min(r, p.lambda * std::exp(A * (c - 1.0)) / (100.0 * p.varpi));
  return r;
}

bool BoundReport::covers(double lo, double hi) const {
  for (const auto& [a, b] : feasible_intervals) {
    if (a <= lo && hi <= b) return true;
  }
  return false;
}

bool BoundReport::feasible_at(double A) const { return covers(A, A); }

BoundReport verify_bound(const KappaProfile& p, double A_max, int A_steps, double slack) {
  check_profile_constants(p.lambda, p.varpi);
  if (!(A_max >= 0.0) || A_steps < 2) throw std::invalid_argument("A grid needs A_max >= 0 and at least 2 steps");
  std::vector<const LevelSummary*> lv;
  BoundReport rep;
  rep.slack = slack;
  rep.varpi_dropped = p.varpi == 0.0;
  for (const auto& l : p.levels) {
    if (l.flagged) {
      ++rep.flagged_levels;
    } else {
      lv.push_back(&l);
    }
  }
  if (lv.empty()) throw std::invalid_argument("profile has no usable levels");

  auto eval = [&](double A) {
    BoundScanPoint s;
    s.A = A;
    s.worst_margin = std::numeric_limits<double>::infinity();
    for (const LevelSummary* l : lv) {
      const double m = l->kappa - (1.0 - slack) * bound_rhs(p, l->c, A);
      if (m < s.worst_margin) {
        s.worst_margin = m;
        s.worst_c = l->c;
      }
    }
    s.feasible = s.worst_margin >= 0.0;
    return s;
  };
  for (int k = 0; k < A_steps; ++k) rep.scan.push_back(eval(A_max * k / (A_steps - 1)));

  auto refine = [&](double in, double out) {
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (in + out);
      (eval(mid).feasible ? in : out) = mid;
    }
    return in;
  };
  for (std::size_t k = 0; k < rep.scan.size(); ++k) {
    if (!rep.scan[k].feasible) continue;
    const std::size_t start = k;
    while (k + 1 < rep.scan.size() && rep.scan[k + 1].feasible) ++k;
    const double lo = start == 0 ? rep.scan[0].A : refine(rep.scan[start].A, rep.scan[start - 1].A);
    const double hi = k + 1 == rep.scan.size() ? rep.scan[k].A : refine(rep.scan[k].A, rep.scan[k + 1].A);
    rep.feasible_intervals.emplace_back(lo, hi);
  }
  return rep;
}

std::vector<double> equality_levels(const KappaProfile& p, double A, double tol) {
  std::vector<double> out;
  for (const auto& l : p.levels) {
    if (l.flagged) continue;
    const double r = bound_rhs(p, l.c, A);
    if (r > 0.0 && std::abs(l.kappa / r - 1.0) <= tol) out.push_back(l.c);
  }
  return out;
}

RankReport constant_rank_scan(const std::vector<LevelSetSample>& samples, double eta0, double A,
                              std::optional<double> tol) {
  RankReport rep;
  rep.eta0 = eta0;
  rep.A = A;
  for (const auto& s : samples) {
    RankLevel l;
    l.c = s.c;
    l.gradient_ok = s.gradient_ok;
    l.components = static_cast<int>(s.curves.size());
    l.min_rank = std::numeric_limits<int>::max();
    l.max_rank = 0;
    l.min_shifted = std::numeric_limits<double>::infinity();
    double best_at_min_rank = std::numeric_limits<double>::infinity();
    for (const LevelPoint* p : usable_points(s)) {
      const VectorXd shifted = p->curvature.principal.array() - eta0 * std::exp(A * p->jet.u);
      const double t = tol.value_or(levelgeom::default_rank_tol(p->curvature.weingarten));
      const int r = levelgeom::count_above(shifted, t);
      const double lo = shifted.minCoeff();
      l.max_rank = std::max(l.max_rank, r);
      l.min_shifted = std::min(l.min_shifted, lo);
      if (r < l.min_rank || (r == l.min_rank && lo < best_at_min_rank)) {
        l.min_rank = r;
        best_at_min_rank = lo;
        l.min_point = p->x;
      }
    }
    if (l.min_rank == std::numeric_limits<int>::max()) l.min_rank = 0;
    rep.levels.push_back(l);
  }
  if (!rep.levels.empty()) {
    rep.rank = rep.levels.front().min_rank;
    for (const auto& l : rep.levels) {
      if (l.min_rank != rep.rank) {
        rep.constant = false;
        rep.change_level = l.c;
        rep.change_point = l.min_point;
        break;
      }
    }
  }
  return rep;
}

RankReport constant_rank_scan(const GridField& g, const std::vector<double>& levels, double eta0,
                              double A, std::optional<double> tol, const ExtractOptions& opt) {
  std::vector<LevelSetSample> s;
  for (double c : levels) s.push_back(extract_level(g, c, opt));
  return constant_rank_scan(s, eta0, A, tol);
}

RankReport constant_rank_scan(const AnalyticField& f, const std::vector<double>& levels, int count,
                              double eta0, double A, std::optional<double> tol) {
  std::vector<LevelSetSample> s;
  for (double c : levels) s.push_back(analytic_level(f, c, count));
  return constant_rank_scan(s, eta0, A, tol);
}

RegionReport omega_varpi_region(const GridField& g, double lambda, double varpi) {
  check_profile_constants(lambda, varpi);
  RegionReport rep;
  rep.mask.assign(g.mask.size(), RegionReport::Outside);
  rep.full_domain = varpi == 0.0;
  rep.threshold = rep.full_domain ? std::numeric_limits<double>::infinity() : lambda / (100.0 * varpi);
  if (rep.full_domain) rep.note = "varpi = 0 (quasilinear operator): the region is all of Omega";
  for (int j = 0; j < g.ny; ++j) {
    for (int i = 0; i < g.nx; ++i) {
      const int k = g.index(i, j);
      if (!g.in_omega(k)) continue;
      ++rep.omega_nodes;
      auto& cell = rep.mask[static_cast<std::size_t>(k)];
      if (rep.full_domain) {
        cell = RegionReport::Inside;
        ++rep.inside;
        continue;
      }
      const Vector2d x = g.node(i, j);
      if (g.domain.boundary_distance(x) < pdesolve::kJetMargin * g.h) {
        cell = RegionReport::Unavailable;
        ++rep.unavailable;
        continue;
      }
      try {
        const double ks = levelgeom::curvature_sample(pdesolve::field_jet(g, x)).kappa_s;
        if (ks > 0.0 && ks < rep.threshold) {
          cell = RegionReport::Inside;
          ++rep.inside;
        }
      } catch (const std::runtime_error&) {
        cell = RegionReport::Unavailable;
        ++rep.unavailable;
      }
    }
  }
  return rep;
}

RigidityReport rigidity_probe(const std::vector<Vector2d>& pts, const std::vector<double>& kappas) {
  if (pts.size() < 8) throw std::invalid_argument("circle fit needs at least 8 points");
  // Algebraic fit x^2 + y^2 + D x + E y + F = 0, then geometric Gauss-Newton.
  Eigen::MatrixXd M(static_cast<Eigen::Index>(pts.size()), 3);
  VectorXd rhs(static_cast<Eigen::Index>(pts.size()));
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    M(r, 0) = pts[k].x();
    M(r, 1) = pts[k].y();
    M(r, 2) = 1.0;
    rhs(r) = -pts[k].squaredNorm();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  if (qr.rank() < 3) throw std::invalid_argument("degenerate circle fit");
  const VectorXd sol = qr.solve(rhs);
  Vector2d c(-0.5 * sol(0), -0.5 * sol(1));
  const double r2 = c.squaredNorm() - sol(2);
  if (!(r2 > 0.0)) throw std::invalid_argument("degenerate circle fit");
  double r = std::sqrt(r2);
  for (int it = 0; it < 20; ++it) {
    Eigen::MatrixXd J(static_cast<Eigen::Index>(pts.size()), 3);
    VectorXd res(static_cast<Eigen::Index>(pts.size()));
    for (std::size_t k = 0; k < pts.size(); ++k) {
      const auto q = static_cast<Eigen::Index>(k);
      const Vector2d d = pts[k] - c;
      const double dn = d.norm();
      res(q) = dn - r;
      J(q, 0) = -d.x() / dn;
      J(q, 1) = -d.y() / dn;
      J(q, 2) = -1.0;
    }
    const VectorXd step = J.colPivHouseholderQr().solve(-res);
    c += step.head<2>();
    r += step(2);
    if (step.norm() < 1e-15 * std::max(1.0, r)) break;
  }
  RigidityReport rep;
  rep.center = c;
  rep.radius = r;
  rep.points = static_cast<int>(pts.size());
  for (const auto& p : pts) rep.radius_deviation = std::max(rep.radius_deviation, std::abs((p - c).norm() - r) / r);
  if (!kappas.empty()) {
    const auto [lo, hi] = std::minmax_element(kappas.begin(), kappas.end());
    double mean = 0.0;
    for (double k : kappas) mean += k;
    mean /= static_cast<double>(kappas.size());
    rep.kappa_spread = mean != 0.0 ? (*hi - *lo) / std::abs(mean) : std::numeric_limits<double>::infinity();
  }
  rep.near_rigid = rep.radius_deviation < 1e-3 && rep.kappa_spread < 1e-3;
  return rep;
}

RigidityReport rigidity_probe(const LevelSetSample& s) {
  std::vector<Vector2d> pts;
  std::vector<double> kap;
  for (const LevelPoint* p : usable_points(s)) {
    if (p->x.size() != 2) throw std::invalid_argument("rigidity probe needs a planar level");
    pts.emplace_back(p->x(0), p->x(1));
    kap.push_back(p->curvature.kappa_s);
  }
  return rigidity_probe(pts, kap);
}

}  // namespace qconv::estimator
