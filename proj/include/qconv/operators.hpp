#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "qconv/levelgeom.hpp"

/// Operator registry F(r, p, u, x) with value, first and second derivatives.
///
/// Derivatives with respect to the matrix argument r treat its n^2 entries
/// as independent with F(r) := F(sym(r)), so dF/dr is symmetric and the
/// contraction F^{ab} X_ab is the directional derivative along symmetric X.
namespace qconv::operators {

using Eigen::MatrixXd;
using Eigen::VectorXd;

struct OperatorState {
  MatrixXd r;
  VectorXd p;
  double u = 0.0;
  VectorXd x;

  int dim() const { return static_cast<int>(p.size()); }
  static OperatorState from_jet(const levelgeom::Jet2& j);
};

/// Scalar nonlinearity f(u) with closed-form first and second derivatives.
struct ScalarFn {
  enum class Kind { Constant, Linear, Exponential };
  Kind kind = Kind::Constant;
  double a = 0.0;  // constant / intercept / amplitude
  double b = 0.0;  // slope / rate

  static ScalarFn constant(double c) { return {Kind::Constant, c, 0.0}; }
  static ScalarFn linear(double c0, double c1) { return {Kind::Linear, c0, c1}; }
  static ScalarFn exponential(double amp, double rate) { return {Kind::Exponential, amp, rate}; }

  double value(double u) const;
  double d1(double u) const;
  double d2(double u) const;
  std::string describe() const;
};

/// Value, gradient and Hessian with respect to z = (vec r, p, u, x).
class OperatorJet {
 public:
  OperatorJet() = default;
  OperatorJet(int n, bool has_second);

  int dim() const { return n_; }
  int size() const { return n_ * n_ + 2 * n_ + 1; }
  bool has_second() const { return has_second_; }

  int ir(int a, int b) const { return a * n_ + b; }
  int ip(int l) const { return n_ * n_ + l; }
  int iu() const { return n_ * n_ + n_; }
  int ix(int k) const { return n_ * n_ + n_ + 1 + k; }

  double value = 0.0;
  VectorXd grad;
  MatrixXd hess;

  double F_r(int a, int b) const { return grad(ir(a, b)); }
  MatrixXd F_r() const;
  double F_p(int l) const { return grad(ip(l)); }
  double F_u() const { return grad(iu()); }
  double F_x(int k) const { return grad(ix(k)); }

  double F_rr(int a, int b, int c, int d) const { return second(ir(a, b), ir(c, d)); }
  double F_rp(int a, int b, int l) const { return second(ir(a, b), ip(l)); }
  double F_rx(int a, int b, int k) const { return second(ir(a, b), ix(k)); }
  double F_ru(int a, int b) const { return second(ir(a, b), iu()); }
  double F_pp(int l, int m) const { return second(ip(l), ip(m)); }
  double F_px(int l, int k) const { return second(ip(l), ix(k)); }
  double F_pu(int l) const { return second(ip(l), iu()); }
  double F_uu() const { return second(iu(), iu()); }
  double F_ux(int k) const { return second(iu(), ix(k)); }
  double F_xx(int k, int l) const { return second(ix(k), ix(l)); }

  /// max |first or second derivative|.
  double sup_norm() const;

 private:
  double second(int i, int j) const;

  int n_ = 0;
  bool has_second_ = false;
};

enum class Kind { LaplaceF, MeanCurvature, PLaplace, PucciExact, PucciSmoothed, Quasilinear, Custom };

enum class PucciSide { Maximal, Minimal };

struct OperatorParams {
  ScalarFn f = ScalarFn::constant(0.0);
  double p_exponent = 2.0;   // p_laplace
  double eps_p = 1e-6;       // p_laplace regularization
  double lambda = 1.0;       // pucci
  double Lambda = 1.0;       // pucci
  double tau = 1e-3;         // pucci_smoothed temperature
  PucciSide side = PucciSide::Maximal;
  double beta = 0.0;         // quasilinear: a(p) = I + beta p p^T / (1 + |p|^2)
};

/// Non-divergence quasilinear structure a(p, u, x) : r - g(p, u, x).
struct QuasilinearForm {
  std::function<MatrixXd(const VectorXd&, double, const VectorXd&)> coefficients;
  std::function<double(const VectorXd&, double, const VectorXd&)> rhs;
};

using ValueFn = std::function<double(const OperatorState&)>;
using JetFn = std::function<OperatorJet(const OperatorState&)>;
using AdmissibleFn = std::function<bool(const OperatorState&)>;

class OperatorSpec {
 public:
  OperatorSpec(std::string name, int n, Kind kind, bool quasilinear, OperatorParams params,
               ValueFn value, JetFn jet, AdmissibleFn admissible);

  const std::string& name() const { return name_; }
  int dim() const { return n_; }
  Kind kind() const { return kind_; }
  bool quasilinear() const { return quasilinear_; }
  const OperatorParams& params() const { return params_; }

  double value(const OperatorState& s) const { return value_(s); }
  OperatorJet jet(const OperatorState& s) const { return jet_(s); }
  bool admissible(const OperatorState& s) const { return admissible_(s); }

  const QuasilinearForm* quasilinear_form() const { return form_.get(); }
  void set_quasilinear_form(QuasilinearForm form);

 private:
  std::string name_;
  int n_;
  Kind kind_;
  bool quasilinear_;
  OperatorParams params_;
  ValueFn value_;
  JetFn jet_;
  AdmissibleFn admissible_;
  std::shared_ptr<const QuasilinearForm> form_;
};

/// Names: laplace_f, mean_curvature, p_laplace, pucci, pucci_smoothed,
/// quasilinear. Throws std::invalid_argument on unknown names or invalid
/// parameters.
OperatorSpec builtin(std::string_view name, int n, const OperatorParams& params = {});

/// User-supplied quasilinear operator; jets by central differences.
OperatorSpec make_quasilinear(std::string name, int n, QuasilinearForm form);

/// Arbitrary value function; jets by central differences.
OperatorSpec make_custom(std::string name, int n, ValueFn value, AdmissibleFn admissible,
                         bool quasilinear = false);

/// Central differences with per-argument step 1e-4 * max(1, |arg|).
OperatorJet finite_difference_jet(const ValueFn& value, const OperatorState& s,
                                  bool second = true);

struct Ellipticity {
  double lambda_min = 0.0;
  bool is_uniform = false;
};

Ellipticity ellipticity(const OperatorSpec& spec, const OperatorState& s, double lambda);

/// max over index tuples and states of |F_rr| |F_r| |p| / lambda; 0 for
/// quasilinear operators.
double varpi(const OperatorSpec& spec, std::span<const OperatorState> states, double lambda);

/// d/dx_j of F(D^2u, Du, u, x) along the data in `jet`:
///   F^{ab} u_abj + F^{p_l} u_lj + F^u u_j + F^{x_j}.
double differentiated_equation_residual(const OperatorSpec& spec, const levelgeom::Jet3& jet,
                                        int j);

}  // namespace qconv::operators
