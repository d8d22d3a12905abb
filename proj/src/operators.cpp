#include "qconv/operators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qconv/error.hpp"

namespace qconv::operators {

namespace {

MatrixXd sym(const MatrixXd& r) { return 0.5 * (r + r.transpose()); }

void check_state(const OperatorState& s, int n) {
  if (s.p.size() != n || s.r.rows() != n || s.r.cols() != n || s.x.size() != n) {
    std::ostringstream os;
    os << "operator state has wrong shape for n = " << n;
    throw std::invalid_argument(os.str());
  }
}

// Radial coefficient functions of s = |p|^2 with two derivatives.
struct Radial {
  double v = 0.0, d1 = 0.0, d2 = 0.0;
};

using RadialFn = std::function<Radial(double)>;

// F = phi(s) tr r + psi(s) p^T r p - f(u), s = |p|^2.
OperatorJet radial_family_jet(const OperatorState& st, const RadialFn& phi_fn,
                              const RadialFn& psi_fn, const ScalarFn& f) {
  const int n = st.dim();
  OperatorJet J(n, true);
  const MatrixXd r = sym(st.r);
  const VectorXd& p = st.p;
  const double s = p.squaredNorm();
  const Radial phi = phi_fn(s);
  const Radial psi = psi_fn(s);
  const double T = r.trace();
  const VectorXd rp = r * p;
  const double q = p.dot(rp);

  J.value = phi.v * T + psi.v * q - f.value(st.u);

  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      J.grad(J.ir(a, b)) = (a == b ? phi.v : 0.0) + psi.v * p(a) * p(b);
    }
  }
  for (int l = 0; l < n; ++l) {
    J.grad(J.ip(l)) = 2.0 * phi.d1 * p(l) * T + 2.0 * psi.d1 * p(l) * q + 2.0 * psi.v * rp(l);
  }
  J.grad(J.iu()) = -f.d1(st.u);

  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      for (int l = 0; l < n; ++l) {
        double v = 2.0 * psi.d1 * p(l) * p(a) * p(b);
        if (a == b) v += 2.0 * phi.d1 * p(l);
        if (a == l) v += psi.v * p(b);
        if (b == l) v += psi.v * p(a);
        J.hess(J.ir(a, b), J.ip(l)) = v;
        J.hess(J.ip(l), J.ir(a, b)) = v;
      }
    }
  }
  for (int l = 0; l < n; ++l) {
    for (int m = 0; m < n; ++m) {
      double v = 4.0 * phi.d2 * p(l) * p(m) * T + 4.0 * psi.d2 * p(l) * p(m) * q +
                 4.0 * psi.d1 * (p(l) * rp(m) + p(m) * rp(l)) + 2.0 * psi.v * r(l, m);
      if (l == m) v += 2.0 * phi.d1 * T + 2.0 * psi.d1 * q;
      J.hess(J.ip(l), J.ip(m)) = v;
    }
  }
  J.hess(J.iu(), J.iu()) = -f.d2(st.u);
  J.hess = sym(J.hess);
  return J;
}

double radial_family_value(const OperatorState& st, const RadialFn& phi_fn,
                           const RadialFn& psi_fn, const ScalarFn& f) {
  const MatrixXd r = sym(st.r);
  const double s = st.p.squaredNorm();
  return phi_fn(s).v * r.trace() + psi_fn(s).v * st.p.dot(r * st.p) - f.value(st.u);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Eigenvalue weight g(e) of a spectral operator sum_k g(e_k).
struct SpectralWeight {
  std::function<double(double)> g, g1, g2;
};

SpectralWeight pucci_weight(const OperatorParams& P, bool smoothed) {
  const double lo = P.lambda, hi = P.Lambda, gap = P.Lambda - P.lambda, tau = P.tau;
  const bool maximal = P.side == PucciSide::Maximal;
  SpectralWeight w;
  if (smoothed) {
    if (maximal) {
      w.g = [=](double e) { return lo * e + gap * tau * softplus(e / tau); };
      w.g1 = [=](double e) { return lo + gap * logistic(e / tau); };
    } else {
      w.g = [=](double e) { return hi * e - gap * tau * softplus(e / tau); };
      w.g1 = [=](double e) { return hi - gap * logistic(e / tau); };
    }
    const double sgn = maximal ? 1.0 : -1.0;
    w.g2 = [=](double e) {
      const double sg = logistic(e / tau);
      return sgn * gap * sg * (1.0 - sg) / tau;
    };
  } else {
    if (maximal) {
      w.g = [=](double e) { return lo * e + gap * std::max(e, 0.0); };
      w.g1 = [=](double e) { return e > 0.0 ? hi : lo; };
    } else {
      w.g = [=](double e) { return hi * e - gap * std::max(e, 0.0); };
      w.g1 = [=](double e) { return e > 0.0 ? lo : hi; };
    }
    w.g2 = [](double) { return 0.0; };
  }
  return w;
}

double spectral_value(const OperatorState& st, const SpectralWeight& w, const ScalarFn& f) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(st.r), Eigen::EigenvaluesOnly);
  double v = 0.0;
  for (int k = 0; k < es.eigenvalues().size(); ++k) v += w.g(es.eigenvalues()(k));
  return v - f.value(st.u);
}

OperatorJet spectral_jet(const OperatorState& st, const SpectralWeight& w, const ScalarFn& f,
                         bool second) {
  const int n = st.dim();
  OperatorJet J(n, second);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(st.r));
  const VectorXd e = es.eigenvalues();
  const MatrixXd& V = es.eigenvectors();
  VectorXd g1(n);
  double v = 0.0;
  for (int k = 0; k < n; ++k) {
    v += w.g(e(k));
    g1(k) = w.g1(e(k));
  }
  J.value = v - f.value(st.u);
  const MatrixXd Fr = V * g1.asDiagonal() * V.transpose();
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) J.grad(J.ir(a, b)) = 0.5 * (Fr(a, b) + Fr(b, a));
  J.grad(J.iu()) = -f.d1(st.u);
  if (!second) return J;

  // Divided differences of g' (Daleckii-Krein).
  MatrixXd G(n, n);
  for (int k = 0; k < n; ++k) {
    for (int l = 0; l < n; ++l) {
      const double de = e(k) - e(l);
      if (std::abs(de) > 1e-8 * (1.0 + std::abs(e(k)) + std::abs(e(l)))) {
        G(k, l) = (g1(k) - g1(l)) / de;
      } else {
        G(k, l) = w.g2(0.5 * (e(k) + e(l)));
      }
    }
  }
  // M[ab](k,l) = (V^T E_ab V)_kl with E_ab the symmetrized unit matrix.
  const int n2 = n * n;
  MatrixXd M(n2, n2);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
          M(a * n + b, k * n + l) = 0.5 * (V(a, k) * V(b, l) + V(b, k) * V(a, l));
  VectorXd gam(n2);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l) gam(k * n + l) = G(k, l);
  const MatrixXd Hrr = M * gam.asDiagonal() * M.transpose();
  J.hess.topLeftCorner(n2, n2) = 0.5 * (Hrr + Hrr.transpose());
  J.hess(J.iu(), J.iu()) = -f.d2(st.u);
  return J;
}

Radial constant_radial(double c) { return {c, 0.0, 0.0}; }

ValueFn symmetrized(ValueFn value) {
  return [value = std::move(value)](const OperatorState& s) {
    OperatorState t = s;
    t.r = sym(s.r);
    return value(t);
  };
}

}  // namespace

OperatorState OperatorState::from_jet(const levelgeom::Jet2& j) {
  OperatorState s;
  s.r = j.hess;
  s.p = j.grad;
  s.u = j.u;
  s.x = j.x.size() == j.grad.size() ? j.x : VectorXd::Zero(j.grad.size());
  return s;
}

double ScalarFn::value(double u) const {
  switch (kind) {
    case Kind::Constant: return a;
    case Kind::Linear: return a + b * u;
    case Kind::Exponential: return a * std::exp(b * u);
  }
  return 0.0;
}

double ScalarFn::d1(double u) const {
  switch (kind) {
    case Kind::Constant: return 0.0;
    case Kind::Linear: return b;
    case Kind::Exponential: return a * b * std::exp(b * u);
  }
  return 0.0;
}

double ScalarFn::d2(double u) const {
  switch (kind) {
    case Kind::Constant:
    case Kind::Linear: return 0.0;
    case Kind::Exponential: return a * b * b * std::exp(b * u);
  }
  return 0.0;
}

std::string ScalarFn::describe() const {
  std::ostringstream os;
  switch (kind) {
    case Kind::Constant: os << "constant(" << a << ")"; break;
    case Kind::Linear: os << "linear(" << a << ", " << b << ")"; break;
    case Kind::Exponential: os << "exponential(" << a << ", " << b << ")"; break;
  }
  return os.str();
}

OperatorJet::OperatorJet(int n, bool has_second) : n_(n), has_second_(has_second) {
  grad = VectorXd::Zero(size());
  if (has_second) hess = MatrixXd::Zero(size(), size());
}

MatrixXd OperatorJet::F_r() const {
  MatrixXd m(n_, n_);
  for (int a = 0; a < n_; ++a)
    for (int b = 0; b < n_; ++b) m(a, b) = grad(ir(a, b));
  return m;
}

double OperatorJet::second(int i, int j) const {
  if (!has_second_) throw std::logic_error("operator jet carries first derivatives only");
  return hess(i, j);
}

double OperatorJet::sup_norm() const {
  double m = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  if (has_second_ && hess.size()) m = std::max(m, hess.cwiseAbs().maxCoeff());
  return m;
}

OperatorSpec::OperatorSpec(std::string name, int n, Kind kind, bool quasilinear,
                           OperatorParams params, ValueFn value, JetFn jet,
                           AdmissibleFn admissible)
    : name_(std::move(name)),
      n_(n),
      kind_(kind),
      quasilinear_(quasilinear),
      params_(std::move(params)),
      value_(std::move(value)),
      jet_(std::move(jet)),
      admissible_(std::move(admissible)) {}

void OperatorSpec::set_quasilinear_form(QuasilinearForm form) {
  form_ = std::make_shared<const QuasilinearForm>(std::move(form));
}

OperatorJet finite_difference_jet(const ValueFn& value, const OperatorState& s, bool second) {
  const int n = s.dim();
  OperatorJet J(n, second);
  const int N = J.size();
  VectorXd z(N);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) z(J.ir(a, b)) = s.r(a, b);
  for (int l = 0; l < n; ++l) z(J.ip(l)) = s.p(l);
  z(J.iu()) = s.u;
  for (int k = 0; k < n; ++k) z(J.ix(k)) = s.x(k);

  auto eval = [&](const VectorXd& y) {
    OperatorState t;
    t.r.resize(n, n);
    t.p.resize(n);
    t.x.resize(n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) t.r(a, b) = y(J.ir(a, b));
    t.r = sym(t.r);
    for (int l = 0; l < n; ++l) t.p(l) = y(J.ip(l));
    t.u = y(J.iu());
    for (int k = 0; k < n; ++k) t.x(k) = y(J.ix(k));
    return value(t);
  };

  VectorXd h(N);
  for (int i = 0; i < N; ++i) h(i) = 1e-4 * std::max(1.0, std::abs(z(i)));
  const double f0 = eval(z);
  J.value = f0;
  VectorXd fp(N), fm(N);
  for (int i = 0; i < N; ++i) {
    VectorXd y = z;
    y(i) = z(i) + h(i);
    fp(i) = eval(y);
    y(i) = z(i) - h(i);
    fm(i) = eval(y);
    J.grad(i) = (fp(i) - fm(i)) / (2.0 * h(i));
  }
  if (!second) return J;
  for (int i = 0; i < N; ++i) {
    J.hess(i, i) = (fp(i) - 2.0 * f0 + fm(i)) / (h(i) * h(i));
    for (int j = i + 1; j < N; ++j) {
      VectorXd y = z;
      y(i) += h(i);
      y(j) += h(j);
      const double fpp = eval(y);
      y(j) = z(j) - h(j);
      const double fpm = eval(y);
      y(i) = z(i) - h(i);
      const double fmm = eval(y);
      y(j) = z(j) + h(j);
      const double fmp = eval(y);
      const double v = (fpp - fpm - fmp + fmm) / (4.0 * h(i) * h(j));
      J.hess(i, j) = v;
      J.hess(j, i) = v;
    }
  }
  return J;
}

OperatorSpec builtin(std::string_view name, int n, const OperatorParams& P) {
  if (n < 2) throw std::invalid_argument("operator arity must be at least 2");
  auto all = [](const OperatorState&) { return true; };
  const ScalarFn f = P.f;

  if (name == "laplace_f") {
    RadialFn one = [](double) { return constant_radial(1.0); };
    RadialFn zero = [](double) { return constant_radial(0.0); };
    OperatorSpec spec(
        "laplace_f", n, Kind::LaplaceF, true, P,
        [=](const OperatorState& s) { return radial_family_value(s, one, zero, f); },
        [=](const OperatorState& s) {
          check_state(s, n);
          return radial_family_jet(s, one, zero, f);
        },
        all);
    spec.set_quasilinear_form(
        {[n](const VectorXd&, double, const VectorXd&) { return MatrixXd::Identity(n, n); },
         [f](const VectorXd&, double u, const VectorXd&) { return f.value(u); }});
    return spec;
  }

  if (name == "mean_curvature") {
    RadialFn phi = [](double s) {
      const double b = 1.0 + s;
      return Radial{std::pow(b, -0.5), -0.5 * std::pow(b, -1.5), 0.75 * std::pow(b, -2.5)};
    };
    RadialFn psi = [](double s) {
      const double b = 1.0 + s;
      return Radial{-std::pow(b, -1.5), 1.5 * std::pow(b, -2.5), -3.75 * std::pow(b, -3.5)};
    };
    OperatorSpec spec(
        "mean_curvature", n, Kind::MeanCurvature, true, P,
        [=](const OperatorState& s) { return radial_family_value(s, phi, psi, f); },
        [=](const OperatorState& s) {
          check_state(s, n);
          return radial_family_jet(s, phi, psi, f);
        },
        all);
    spec.set_quasilinear_form({[n](const VectorXd& p, double, const VectorXd&) {
                                 const double W2 = 1.0 + p.squaredNorm();
                                 return MatrixXd((MatrixXd::Identity(n, n) -
                                                  p * p.transpose() / W2) /
                                                 std::sqrt(W2));
                               },
                               [f](const VectorXd&, double u, const VectorXd&) {
                                 return f.value(u);
                               }});
    return spec;
  }

  if (name == "p_laplace") {
    if (!(P.p_exponent > 1.0)) throw std::invalid_argument("p_laplace requires p > 1");
    if (!(P.eps_p >= 0.0)) throw std::invalid_argument("p_laplace requires eps_p >= 0");
    const double m = 0.5 * (P.p_exponent - 2.0);
    const double e2 = P.eps_p * P.eps_p;
    RadialFn phi = [=](double s) {
      const double b = e2 + s;
      return Radial{std::pow(b, m), m * std::pow(b, m - 1.0),
                    m * (m - 1.0) * std::pow(b, m - 2.0)};
    };
    RadialFn psi = [=](double s) {
      const double b = e2 + s;
      return Radial{2.0 * m * std::pow(b, m - 1.0), 2.0 * m * (m - 1.0) * std::pow(b, m - 2.0),
                    2.0 * m * (m - 1.0) * (m - 2.0) * std::pow(b, m - 3.0)};
    };
    // With eps_p = 0 the coefficients blow up (p < 2) or degenerate (p > 2)
    // at critical points.
    AdmissibleFn adm = [=](const OperatorState& s) {
      return e2 > 0.0 || m == 0.0 || s.p.squaredNorm() > 0.0;
    };
    OperatorSpec spec(
        "p_laplace", n, Kind::PLaplace, true, P,
        [=](const OperatorState& s) { return radial_family_value(s, phi, psi, f); },
        [=](const OperatorState& s) {
          check_state(s, n);
          return radial_family_jet(s, phi, psi, f);
        },
        adm);
    spec.set_quasilinear_form({[=](const VectorXd& p, double, const VectorXd&) {
                                 const double b = e2 + p.squaredNorm();
                                 return MatrixXd(std::pow(b, m) * MatrixXd::Identity(n, n) +
                                                 2.0 * m * std::pow(b, m - 1.0) * p *
                                                     p.transpose());
                               },
                               [f](const VectorXd&, double u, const VectorXd&) {
                                 return f.value(u);
                               }});
    return spec;
  }

  if (name == "quasilinear") {
    if (!(P.beta > -1.0)) throw std::invalid_argument("quasilinear requires beta > -1");
    const double beta = P.beta;
    RadialFn one = [](double) { return constant_radial(1.0); };
    RadialFn psi = [=](double s) {
      const double b = 1.0 + s;
      return Radial{beta / b, -beta / (b * b), 2.0 * beta / (b * b * b)};
    };
    OperatorSpec spec(
        "quasilinear", n, Kind::Quasilinear, true, P,
        [=](const OperatorState& s) { return radial_family_value(s, one, psi, f); },
        [=](const OperatorState& s) {
          check_state(s, n);
          return radial_family_jet(s, one, psi, f);
        },
        all);
    spec.set_quasilinear_form({[=](const VectorXd& p, double, const VectorXd&) {
                                 return MatrixXd(MatrixXd::Identity(n, n) +
                                                 beta * p * p.transpose() /
                                                     (1.0 + p.squaredNorm()));
                               },
                               [f](const VectorXd&, double u, const VectorXd&) {
                                 return f.value(u);
                               }});
    return spec;
  }

  if (name == "pucci" || name == "pucci_smoothed") {
    if (!(P.lambda > 0.0) || !(P.Lambda >= P.lambda)) {
      throw std::invalid_argument("pucci requires 0 < lambda <= Lambda");
    }
    const bool smoothed = name == "pucci_smoothed";
    if (smoothed && !(P.tau > 0.0)) throw std::invalid_argument("pucci_smoothed requires tau > 0");
    const SpectralWeight w = pucci_weight(P, smoothed);
    AdmissibleFn adm = all;
    if (!smoothed && P.Lambda > P.lambda) {
      // Away from the kink at a zero eigenvalue and from eigenvalue crossings.
      adm = [](const OperatorState& s) {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(s.r), Eigen::EigenvaluesOnly);
        const VectorXd& e = es.eigenvalues();
        for (int k = 0; k < e.size(); ++k) {
          if (std::abs(e(k)) < 1e-6) return false;
          if (k > 0 && e(k) - e(k - 1) < 1e-6) return false;
        }
        return true;
      };
    }
    return OperatorSpec(
        std::string(name), n, smoothed ? Kind::PucciSmoothed : Kind::PucciExact,
        P.Lambda == P.lambda, P,
        [=](const OperatorState& s) { return spectral_value(s, w, f); },
        [=](const OperatorState& s) {
          check_state(s, n);
          return spectral_jet(s, w, f, smoothed);
        },
        adm);
  }

  throw std::invalid_argument("unknown operator '" + std::string(name) + "'");
}

OperatorSpec make_quasilinear(std::string name, int n, QuasilinearForm form) {
  if (n < 2) throw std::invalid_argument("operator arity must be at least 2");
  if (!form.coefficients || !form.rhs) {
    throw std::invalid_argument("quasilinear operator needs coefficients and right-hand side");
  }
  auto coeff = form.coefficients;
  auto rhs = form.rhs;
  ValueFn value = [=](const OperatorState& s) {
    return (sym(coeff(s.p, s.u, s.x)).cwiseProduct(sym(s.r))).sum() - rhs(s.p, s.u, s.x);
  };
  JetFn jet = [=](const OperatorState& s) {
    check_state(s, n);
    OperatorJet J = finite_difference_jet(value, s, true);
    // Exact where the structure fixes it: F_r = sym(a), F_rr = 0.
    const MatrixXd a = sym(coeff(s.p, s.u, s.x));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) J.grad(J.ir(i, j)) = a(i, j);
    J.hess.topLeftCorner(n * n, n * n).setZero();
    return J;
  };
  OperatorSpec spec(std::move(name), n, Kind::Custom, true, {}, value, jet,
                    [](const OperatorState&) { return true; });
  spec.set_quasilinear_form(std::move(form));
  return spec;
}

OperatorSpec make_custom(std::string name, int n, ValueFn value, AdmissibleFn admissible,
                         bool quasilinear) {
  if (n < 2) throw std::invalid_argument("operator arity must be at least 2");
  ValueFn v = symmetrized(std::move(value));
  JetFn jet = [v, n](const OperatorState& s) {
    check_state(s, n);
    return finite_difference_jet(v, s, true);
  };
  if (!admissible) admissible = [](const OperatorState&) { return true; };
  return OperatorSpec(std::move(name), n, Kind::Custom, quasilinear, {}, v, jet,
                      std::move(admissible));
}

Ellipticity ellipticity(const OperatorSpec& spec, const OperatorState& s, double lambda) {
  if (!spec.admissible(s)) throw DegenerateState("ellipticity: state outside admissible set");
  const OperatorJet J = spec.jet(s);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(sym(J.F_r()), Eigen::EigenvaluesOnly);
  Ellipticity e;
  e.lambda_min = es.eigenvalues()(0);
  e.is_uniform = e.lambda_min >= lambda;
  return e;
}

double varpi(const OperatorSpec& spec, std::span<const OperatorState> states, double lambda) {
  if (states.empty()) throw std::invalid_argument("varpi: empty state list");
  if (!(lambda > 0.0)) throw std::invalid_argument("varpi: lambda must be positive");
  if (spec.quasilinear()) return 0.0;
  const int n = spec.dim();
  double best = 0.0;
  for (const OperatorState& s : states) {
    const OperatorJet J = spec.jet(s);
    if (!J.has_second()) {
      throw std::invalid_argument("varpi: operator '" + spec.name() +
                                  "' provides no second derivatives");
    }
    const double frr = J.hess.topLeftCorner(n * n, n * n).cwiseAbs().maxCoeff();
    const double fr = J.F_r().cwiseAbs().maxCoeff();
    best = std::max(best, frr * fr * s.p.norm() / lambda);
  }
  return best;
}

double differentiated_equation_residual(const OperatorSpec& spec, const levelgeom::Jet3& jet,
                                        int j) {
  if (!jet.has_third()) {
    throw std::invalid_argument("differentiated_equation_residual: third derivatives missing");
  }
  const int n = jet.dim();
  if (j < 0 || j >= n) throw std::invalid_argument("differentiated_equation_residual: bad direction");
  const OperatorJet J = spec.jet(OperatorState::from_jet(jet));
  double v = J.F_x(j) + J.F_u() * jet.grad(j);
  for (int l = 0; l < n; ++l) v += J.F_p(l) * jet.hess(l, j);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) v += J.F_r(a, b) * jet.d3(a, b, j);
  return v;
}

}  // namespace qconv::operators
