#include "qconv/structcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qconv/error.hpp"

namespace qconv::structcheck {

namespace {

using MatrixXld = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;

MatrixXd sym(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ (b + 0x632BE59BD9B4E019ull));
}

MatrixXd build_A(const AugmentedState& s) {
  const int n = s.n;
  MatrixXd A = MatrixXd::Zero(n + 1, n + 1);
  A.topLeftCorner(n, n) = s.tilde_A();
  A(n - 1, n) = A(n, n - 1) = 1.0 / s.t;
  return A;
}

// Root in y of the increasing function g, by bracketing and bisection.
double increasing_root(const std::function<double(double)>& g, double guess) {
  double lo = guess, hi = guess;
  double glo = g(lo), ghi = glo;
  double step = std::max(1.0, std::abs(guess));
  int expand = 0;
  while (glo > 0.0 && expand++ < 200) {
    hi = lo;
    ghi = glo;
    lo -= step;
    step *= 2.0;
    glo = g(lo);
  }
  expand = 0;
  while (ghi < 0.0 && expand++ < 200) {
    lo = hi;
    glo = ghi;
    hi += step;
    step *= 2.0;
    ghi = g(hi);
  }
  if (!(glo <= 0.0 && ghi >= 0.0)) throw ConvergenceError("root bracket not found");
  for (int it = 0; it < 300 && hi - lo > 4e-16 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace

MatrixXd AugmentedState::tilde_A() const {
  MatrixXd M = MatrixXd::Zero(n, n);
  for (int i = 0; i < n - 1; ++i) M(i, i) = tangential(i);
  for (int k = 0; k < n; ++k) M(n - 1, k) = M(k, n - 1) = cross(k);
  return M;
}

OperatorState AugmentedState::operator_state() const {
  OperatorState st;
  st.r = tilde_A() / t;
  st.p = VectorXd::Unit(n, n - 1) / t;
  st.u = u;
  st.x = x.size() == n ? x : VectorXd::Zero(n);
  return st;
}

void AugmentedState::validate() const {
  if (n < 2) throw std::invalid_argument("augmented state needs n >= 2");
  if (tangential.size() != n - 1 || cross.size() != n || (x.size() != 0 && x.size() != n)) {
    throw std::invalid_argument("augmented state has inconsistent sizes");
  }
  if (!(t > 0.0) || !std::isfinite(t)) throw std::invalid_argument("augmented state needs t > 0");
  for (int i = 0; i < n - 1; ++i) {
    if (!(tangential(i) <= 0.0)) {
      throw std::invalid_argument("augmented state needs nonpositive tangential entries");
    }
  }
}

AugmentedMatrices build_matrices(const AugmentedState& s) {
  s.validate();
  const int n = s.n;
  for (int i = 0; i < n - 1; ++i) {
    if (!(s.tangential(i) < 0.0)) {
      throw DegenerateState("build_matrices: tangential entry a_" + std::to_string(i + 1) +
                            " vanishes; A is singular");
    }
  }
  const double t = s.t;
  AugmentedMatrices m;
  m.A = build_A(s);
  MatrixXd B = MatrixXd::Zero(n + 1, n + 1);
  double chi = -t * t * s.cross(n - 1);
  for (int i = 0; i < n - 1; ++i) {
    const double ai = s.tangential(i), ci = s.cross(i);
    B(i, i) = 1.0 / ai;
    B(i, n) = B(n, i) = -t * ci / ai;
    chi += t * t * ci * ci / ai;
  }
  B(n - 1, n) = B(n, n - 1) = t;
  B(n, n) = chi;
  m.B = B;
  m.chi = chi;
  m.Q = t * t * m.A.topLeftCorner(n, n);
  return m;
}

double TangentVector::sup_norm() const {
  double m = std::abs(Yt);
  if (Xt.size()) m = std::max(m, Xt.cwiseAbs().maxCoeff());
  if (Z.size()) m = std::max(m, Z.cwiseAbs().maxCoeff());
  return m;
}

TangentVector zero_tangent(const AugmentedState& s) {
  TangentVector v;
  v.Xt = MatrixXd::Zero(s.n + 1, s.n + 1);
  v.Yt = 0.0;
  v.Z = VectorXd::Zero(s.n);
  return v;
}

TangentVector make_tangent(const AugmentedState& s, const MatrixXd& block, double Yt,
                           const VectorXd& Z) {
  const int n = s.n;
  if (block.rows() != n || block.cols() != n || Z.size() != n) {
    throw std::invalid_argument("make_tangent: wrong sizes");
  }
  TangentVector v = zero_tangent(s);
  v.Xt.topLeftCorner(n, n) = sym(block);
  v.Yt = Yt;
  v.Xt(n, n - 1) = v.Xt(n - 1, n) = 2.0 * Yt / s.t;
  v.Z = Z;
  return v;
}

TangentVector raw_to_tilde(const AugmentedState& s, const MatrixXd& X) {
  s.validate();
  const int n = s.n;
  if (X.rows() != n + 1 || X.cols() != n + 1) throw std::invalid_argument("raw_to_tilde: wrong size");
  const double scale = std::max(1.0, X.cwiseAbs().maxCoeff());
  if ((X - X.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw std::invalid_argument("raw_to_tilde: X must be symmetric");
  }
  for (int l = 0; l < n; ++l) {
    if (std::abs(X(l, n - 1)) > 1e-12 * scale) {
      throw std::invalid_argument(
          "raw_to_tilde: X must vanish on the gradient row except the augmented entry");
    }
  }
  const double t = s.t;
  const MatrixXd A = build_A(s);
  const double xe = X(n, n - 1);
  const MatrixXd Xt = sym((-t * A * X * A - xe * A) / (t * t));
  TangentVector v = make_tangent(s, Xt.topLeftCorner(n, n), -xe / (t * t), VectorXd::Zero(n));
  return v;
}

MatrixXd tilde_to_raw(const AugmentedState& s, const TangentVector& v) {
  const AugmentedMatrices m = build_matrices(s);
  const double t = s.t;
  const int n = s.n;
  return sym(-t * m.B * v.Xt * m.B + 0.5 * t * t * v.Xt(n, n - 1) * m.B);
}

double constraint_residual(const OperatorJet& jet, const TangentVector& v) {
  const int n = jet.dim();
  double r = jet.F_p(n - 1) * v.Yt;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) r += jet.F_r(a, b) * v.Xt(a, b);
  for (int k = 0; k < n; ++k) r += jet.F_x(k) * v.Z(k);
  return r;
}

double concavity_term_explicit(const AugmentedState& s, const TangentVector& v,
                               const OperatorJet& jet, bool closure) {
  const int n = s.n;
  const double t = s.t;
  const MatrixXd At = s.tilde_A();
  const MatrixXd Fr = jet.F_r();
  const double xe = v.Xt(n, n - 1);
  double I = 0.0;
  for (int i = 0; i < n - 1; ++i) {
    const double aii = s.tangential(i);
    if (aii == 0.0) {
      if (!closure) {
        throw DegenerateState("concavity term: a_" + std::to_string(i + 1) +
                              " = 0 without the closure rule");
      }
      continue;
    }
    VectorXd Y(n);
    for (int a = 0; a < n; ++a) Y(a) = t * t * t * At(i, a) * xe - t * t * v.Xt(i, a);
    I += Y.dot(Fr * Y) / aii;
  }
  return 2.0 * I;
}

void apply_closure(const AugmentedState& s, TangentVector& v) {
  const int n = s.n;
  const MatrixXd At = s.tilde_A();
  for (int k = 0; k < n - 1; ++k) {
    if (s.tangential(k) != 0.0) continue;
    for (int a = 0; a < n; ++a) v.Xt(k, a) = v.Xt(a, k) = 2.0 * At(k, a) * v.Yt;
  }
}

double concavity_term_reference(const AugmentedState& s, const MatrixXd& X,
                                const OperatorJet& jet) {
  const int n = s.n;
  const double xmax = X.cwiseAbs().maxCoeff();
  if (xmax == 0.0) return 0.0;
  const AugmentedMatrices m = build_matrices(s);
  const MatrixXld B = m.B.cast<long double>();
  const MatrixXld Xl = X.cast<long double>();
  const MatrixXld Fr = jet.F_r().cast<long double>();
  const long double h = 1e-4L * std::max(1.0L, static_cast<long double>(m.B.cwiseAbs().maxCoeff())) /
                        static_cast<long double>(xmax);
  auto g = [&](long double sv) {
    const MatrixXld Bs = B + sv * Xl;
    const long double tb = Bs(n, n - 1);
    const MatrixXld inv = Bs.partialPivLu().inverse();
    long double acc = 0.0L;
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) acc += Fr(a, b) * inv(a, b);
    return tb * tb * acc;
  };
  const long double d2 =
      (-g(2 * h) + 16 * g(h) - 30 * g(0) + 16 * g(-h) - g(-2 * h)) / (12 * h * h);
  if (!std::isfinite(static_cast<double>(d2))) {
    throw DegenerateState("concavity reference: step underflow near a singular B");
  }
  return static_cast<double>(d2);
}

double operator_form(const AugmentedState& s, const TangentVector& v, const OperatorJet& jet) {
  if (!jet.has_second()) {
    throw std::invalid_argument("operator form needs second derivatives of the operator");
  }
  const int n = s.n;
  const int n2 = n * n;
  const double t = s.t, Y = v.Yt;
  const int pn = n - 1;
  VectorXd xv(n2);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) xv(a * n + b) = v.Xt(a, b);
  const MatrixXd At = s.tilde_A();

  double S = xv.dot(jet.hess.topLeftCorner(n2, n2) * xv);
  double frX = 0.0, frA = 0.0, frpX = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      frX += jet.F_r(a, b) * v.Xt(a, b);
      frA += jet.F_r(a, b) * At(a, b);
      frpX += jet.F_rp(a, b, pn) * v.Xt(a, b);
      for (int k = 0; k < n; ++k) S += 2.0 * jet.F_rx(a, b, k) * v.Xt(a, b) * v.Z(k);
    }
  }
  S += 2.0 * frpX * Y + jet.F_pp(pn, pn) * Y * Y;
  for (int k = 0; k < n; ++k) {
    S += 2.0 * jet.F_px(pn, k) * Y * v.Z(k);
    for (int l = 0; l < n; ++l) S += jet.F_xx(k, l) * v.Z(k) * v.Z(l);
  }
  S += 2.0 * t * jet.F_p(pn) * Y * Y + 6.0 * t * frX * Y - 6.0 * t * frA * Y * Y;
  return S;
}

double operator_form_linear_in_r(const OperatorSpec& spec, const AugmentedState& s,
                                 const TangentVector& v, const OperatorJet& jet) {
  if (!jet.has_second()) {
    throw std::invalid_argument("operator form needs second derivatives of the operator");
  }
  const int n = s.n;
  const int pn = n - 1;
  const double t = s.t, Y = v.Yt;
  const OperatorState st = s.operator_state();
  OperatorState st0 = st;
  st0.r.setZero();
  const double Flin = spec.value(st) - spec.value(st0);
  double frX = 0.0, frpX = 0.0;
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      frX += jet.F_r(a, b) * v.Xt(a, b);
      frpX += jet.F_rp(a, b, pn) * v.Xt(a, b);
    }
  }
  return 2.0 * frpX * Y + jet.F_pp(pn, pn) * Y * Y + 2.0 * t * jet.F_p(pn) * Y * Y +
         6.0 * t * frX * Y - 6.0 * t * t * Flin * Y * Y;
}

double structural_form(const AugmentedState& s, const TangentVector& v, const OperatorJet& jet,
                       bool closure) {
  return concavity_term_explicit(s, v, jet, closure) / (s.t * s.t * s.t) +
         operator_form(s, v, jet);
}

std::vector<TangentVector> sample_tangents(const AugmentedState& s, const OperatorJet& jet,
                                           int count, std::uint64_t seed, double radius,
                                           double floor) {
  const int n = s.n;
  const double fnn = jet.F_r(n - 1, n - 1);
  if (!(fnn >= floor)) {
    std::ostringstream os;
    os << "sample_tangents: F^{nn} = " << fnn << " below floor " << floor;
    throw DegenerateState(os.str());
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> N(0.0, 1.0);
  bool any_closure = false;
  for (int i = 0; i < n - 1; ++i) any_closure |= s.tangential(i) == 0.0;

  std::vector<TangentVector> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int c = 0; c < count; ++c) {
    MatrixXd block = MatrixXd::Zero(n, n);
    for (int a = 0; a < n; ++a) {
      for (int b = a; b < n; ++b) {
        if (a == n - 1 && b == n - 1) continue;
        block(a, b) = block(b, a) = radius * N(rng);
      }
    }
    const double Y = radius * N(rng);
    VectorXd Z(n);
    for (int k = 0; k < n; ++k) Z(k) = radius * N(rng);
    TangentVector v = make_tangent(s, block, Y, Z);
    if (any_closure) apply_closure(s, v);
    v.Xt(n - 1, n - 1) = 0.0;
    v.Xt(n - 1, n - 1) = -constraint_residual(jet, v) / fnn;
    out.push_back(std::move(v));
  }
  return out;
}

VectorXd free_coordinates(const TangentVector& v) {
  const int n = static_cast<int>(v.Z.size());
  VectorXd c(n * (n + 1) / 2 + 1 + n);
  int k = 0;
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b) c(k++) = v.Xt(a, b);
  c(k++) = v.Yt;
  for (int i = 0; i < n; ++i) c(k++) = v.Z(i);
  return c;
}

std::vector<AugmentedState> sample_level_states(const OperatorSpec& spec, int count,
                                                std::uint64_t seed) {
  const int n = spec.dim();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U01(0.0, 1.0);
  std::normal_distribution<double> N(0.0, 0.5);
  std::vector<AugmentedState> out;
  long attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > 100L * std::max(count, 1) + 100) {
      throw ConvergenceError("sample_level_states: too many rejected draws for " + spec.name());
    }
    AugmentedState s;
    s.n = n;
    s.t = 0.5 + 1.5 * U01(rng);
    s.tangential.resize(n - 1);
    for (int i = 0; i < n - 1; ++i) s.tangential(i) = -(0.2 + 1.8 * U01(rng));
    s.cross.resize(n);
    for (int k = 0; k < n; ++k) s.cross(k) = N(rng);
    s.u = U01(rng);
    s.x.resize(n);
    for (int k = 0; k < n; ++k) s.x(k) = -1.0 + 2.0 * U01(rng);
    try {
      auto g = [&](double y) {
        AugmentedState q = s;
        q.cross(n - 1) = y;
        return spec.value(q.operator_state());
      };
      s.cross(n - 1) = increasing_root(g, s.cross(n - 1));
    } catch (const ConvergenceError&) {
      continue;
    }
    const OperatorState st = s.operator_state();
    if (!spec.admissible(st)) continue;
    if (!std::isfinite(spec.value(st))) continue;
    out.push_back(std::move(s));
  }
  return out;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::SatisfiedOnSamples: return "SATISFIED_ON_SAMPLES";
    case Verdict::Violated: return "VIOLATED";
    case Verdict::Fails: return "FAILS";
    case Verdict::Inconclusive: return "INCONCLUSIVE";
  }
  return "INCONCLUSIVE";
}

double form_scale(const OperatorJet& jet, const TangentVector& v) {
  const double j = jet.sup_norm();
  const double w = v.sup_norm();
  return (1.0 + j * j) * std::max(1.0, w * w);
}

namespace {

template <class FormFn>
ConditionReport sweep(const OperatorSpec& spec, const std::vector<AugmentedState>& states,
                      const CheckOptions& opt, FormFn form) {
  ConditionReport rep;
  rep.operator_name = spec.name();
  rep.n = spec.dim();
  rep.seed = opt.seed;
  bool have = false;
  for (std::size_t i = 0; i < states.size(); ++i) {
    const AugmentedState& s = states[i];
    const OperatorJet jet = spec.jet(s.operator_state());
    if (!jet.has_second()) {
      throw std::invalid_argument("operator '" + spec.name() +
                                  "' provides no second derivatives; use a smoothed variant");
    }
    for (std::size_t ri = 0; ri < opt.radii.size(); ++ri) {
      const auto tangents = sample_tangents(s, jet, opt.samples_per_state,
                                            derive_seed(opt.seed, i, ri), opt.radii[ri]);
      for (const TangentVector& v : tangents) {
        const double value = form(s, v, jet);
        const double normalized = value / form_scale(jet, v);
        ++rep.samples;
        if (!have || normalized > rep.max_normalized) {
          have = true;
          rep.max_normalized = normalized;
          rep.max_value = value;
          rep.witness_state = s;
          rep.witness_tangent = v;
        }
      }
    }
  }
  return rep;
}

}  // namespace

ConditionReport check_local_convexity(const OperatorSpec& spec,
                                      const std::vector<AugmentedState>& states,
                                      const CheckOptions& opt) {
  ConditionReport rep = sweep(spec, states, opt,
                              [](const AugmentedState& s, const TangentVector& v,
                                 const OperatorJet& jet) {
                                bool closure = false;
                                for (int i = 0; i < s.n - 1; ++i)
                                  closure |= s.tangential(i) == 0.0;
                                return structural_form(s, v, jet, closure);
                              });
  rep.condition = "local_convexity";
  if (rep.samples > 0 && rep.max_normalized > opt.violation_tol) {
    rep.verdict = Verdict::Violated;
  } else if (rep.samples > 0 && rep.max_normalized <= opt.satisfied_tol) {
    rep.verdict = Verdict::SatisfiedOnSamples;
  } else {
    rep.verdict = Verdict::Inconclusive;
  }
  rep.note =
      "Sampled check of H = I/t^3 + S on constrained tangents. A sample can falsify the "
      "condition but cannot prove it.";
  return rep;
}

ConditionReport check_augmented_convexity_necessary(const OperatorSpec& spec,
                                                    const std::vector<AugmentedState>& states,
                                                    const CheckOptions& opt) {
  ConditionReport rep = sweep(spec, states, opt, operator_form);
  rep.condition = "augmented_convexity_necessary";
  if (rep.samples > 0 && rep.max_normalized > opt.violation_tol) {
    rep.verdict = Verdict::Fails;
  } else if (rep.samples > 0 && rep.max_normalized <= opt.satisfied_tol) {
    rep.verdict = Verdict::SatisfiedOnSamples;
  } else {
    rep.verdict = Verdict::Inconclusive;
  }
  rep.note =
      "Sampled check of the necessary condition S <= 0. A positive S certifies that the "
      "augmented super-level set is not locally convex; no positive sample proves nothing.";
  return rep;
}

std::optional<MidpointWitness> midpoint_convexity_falsifier(const ConvexityProbe& probe,
                                                            long pairs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (long i = 0; i < pairs; ++i) {
    auto [a, b] = probe.sample_pair(rng);
    if ((a - b).cwiseAbs().maxCoeff() == 0.0) continue;
    if (!probe.member(a) || !probe.member(b)) continue;
    VectorXd m = 0.5 * (a + b);
    if (!probe.member(m)) return MidpointWitness{a, b, m, i};
  }
  return std::nullopt;
}

ConvexityProbe augmented_set_probe(const OperatorSpec& spec, double u, const VectorXd& x,
                                   double spread) {
  const int n = spec.dim();
  const int m = n * (n + 1) / 2;
  const int inn = m - 1;  // (n-1, n-1) is the last upper-triangle entry
  auto unpack = [n](const VectorXd& v) {
    MatrixXd A(n, n);
    int k = 0;
    for (int a = 0; a < n; ++a)
      for (int b = a; b < n; ++b) A(a, b) = A(b, a) = v(k++);
    return A;
  };
  auto state_of = [=](const VectorXd& v) {
    const double t = v(m);
    OperatorState st;
    st.r = unpack(v) / (t * t * t);
    st.p = VectorXd::Unit(n, n - 1) / t;
    st.u = u;
    st.x = x;
    return st;
  };
  ConvexityProbe probe;
  probe.member = [=](const VectorXd& v) {
    if (!(v(m) > 0.0)) return false;
    const OperatorState st = state_of(v);
    return spec.admissible(st) && spec.value(st) >= 0.0;
  };
  auto project = [=](VectorXd& v) {
    auto g = [&](double y) {
      VectorXd w = v;
      w(inn) = y;
      return spec.value(state_of(w));
    };
    const double y = increasing_root(g, v(inn));
    v(inn) = y + 1e-12 * std::max(1.0, std::abs(y));
  };
  probe.sample_pair = [=](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> U01(0.0, 1.0);
    std::normal_distribution<double> N(0.0, 1.0);
    VectorXd a(m + 1);
    int k = 0;
    for (int r = 0; r < n; ++r) {
      for (int c = r; c < n; ++c) {
        a(k++) = (r == c && r < n - 1) ? -(0.2 + 1.8 * U01(rng)) : 0.5 * N(rng);
      }
    }
    a(m) = 0.5 + 1.5 * U01(rng);
    VectorXd b = a;
    for (int j = 0; j <= m; ++j) b(j) += spread * N(rng);
    b(m) = std::max(b(m), 0.25);
    try {
      project(a);
      project(b);
    } catch (const ConvergenceError&) {
      b = a;  // skipped as coincident
    }
    return std::make_pair(a, b);
  };
  return probe;
}

}  // namespace qconv::structcheck
