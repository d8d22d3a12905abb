#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qconv/operators.hpp"

/// Structural convexity conditions in augmented-matrix coordinates.
///
/// The direction theta is fixed to e_n. A state is (t, diagonal tangential
/// block a, last row of A~, u, x) with Du = e_n / t and D^2u = A~ / t.
/// Matrices of size (n+1) use 0-based indices; index n-1 is the gradient
/// direction and index n the augmented row.
namespace qconv::structcheck {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using operators::OperatorJet;
using operators::OperatorSpec;
using operators::OperatorState;

struct AugmentedState {
  int n = 0;
  double t = 1.0;
  VectorXd tangential;  // a_11..a_{n-1,n-1}, all <= 0
  VectorXd cross;       // A~_{n,1..n}
  double u = 0.0;
  VectorXd x;

  /// n x n block A~.
  MatrixXd tilde_A() const;
  /// Operator arguments (A~/t, e_n/t, u, x).
  OperatorState operator_state() const;
  void validate() const;
};

struct AugmentedMatrices {
  MatrixXd A;  // (n+1) x (n+1), off-diagonal weight 1/t
  MatrixXd B;  // A^{-1}
  MatrixXd Q;  // t^2 J B^{-1} J^T
  double chi = 0.0;
};

/// Throws DegenerateState when some a_ii = 0 or the state is invalid.
AugmentedMatrices build_matrices(const AugmentedState& s);

struct TangentVector {
  MatrixXd Xt;  // symmetric (n+1) x (n+1); row n vanishes except Xt(n, n-1) = 2 Yt / t
  double Yt = 0.0;
  VectorXd Z;

  double sup_norm() const;
};

TangentVector zero_tangent(const AugmentedState& s);
/// Tangent from the free n x n block, Yt and Z; fills row n.
TangentVector make_tangent(const AugmentedState& s, const MatrixXd& block, double Yt,
                           const VectorXd& Z);

/// Raw X must vanish on row/column n-1 except the (n, n-1) entry.
TangentVector raw_to_tilde(const AugmentedState& s, const MatrixXd& X);
MatrixXd tilde_to_raw(const AugmentedState& s, const TangentVector& v);

/// F^{ab} Xt_ab + F^{p_n} Yt + F^{x_k} Z_k.
double constraint_residual(const OperatorJet& jet, const TangentVector& v);

/// 2 sum_i (Y_i^T F_r Y_i) / a_ii with Y_ia = t^3 A_ia Xt_{n+1,n} - t^2 Xt_ia.
/// Indices with a_ii = 0 are skipped when `closure` is set (the tangent must
/// then carry Y_i = 0, see apply_closure); otherwise they throw.
double concavity_term_explicit(const AugmentedState& s, const TangentVector& v,
                               const OperatorJet& jet, bool closure = false);

/// Forces Y_k = 0 for every k with a_kk = 0.
void apply_closure(const AugmentedState& s, TangentVector& v);

/// Second directional derivative of <F_r, t(B)^2 J B^{-1} J^T> along raw X,
/// t(B) = B_{n+1,n}, by a five-point stencil in extended precision.
double concavity_term_reference(const AugmentedState& s, const MatrixXd& X,
                                const OperatorJet& jet);

/// Nine-term second variation of F along the tangent.
double operator_form(const AugmentedState& s, const TangentVector& v, const OperatorJet& jet);

/// Reduced form for operators linear in r (F_rr = 0, no x dependence):
/// 2 F^{ab,p_n} Xt Yt + F^{p_n p_n} Yt^2 + 2t F^{p_n} Yt^2 + 6t F^{ab} Xt Yt
/// - 6 t^2 F_lin Yt^2, where F_lin = F(r) - F(0) is the r-linear part.
double operator_form_linear_in_r(const OperatorSpec& spec, const AugmentedState& s,
                                 const TangentVector& v, const OperatorJet& jet);

/// concavity_term_explicit / t^3 + operator_form.
double structural_form(const AugmentedState& s, const TangentVector& v, const OperatorJet& jet,
                       bool closure = false);

/// Seeded normal free components times `radius`; the last diagonal entry of
/// the block is then solved from the constraint. Throws DegenerateState when
/// F^{nn} is below `floor`.
std::vector<TangentVector> sample_tangents(const AugmentedState& s, const OperatorJet& jet,
                                           int count, std::uint64_t seed, double radius = 1.0,
                                           double floor = 1e-10);

/// Free coordinates of a tangent: upper triangle of the block (row-major),
/// then Yt, then Z.
VectorXd free_coordinates(const TangentVector& v);

/// States with F = 0: t ~ U(0.5, 2), a_ii ~ -U(0.2, 2), cross ~ N(0, 0.5),
/// u ~ U(0, 1), x ~ U(-1, 1); A~_nn solved by Newton. Inadmissible or
/// non-converging draws are redrawn.
std::vector<AugmentedState> sample_level_states(const OperatorSpec& spec, int count,
                                                std::uint64_t seed);

enum class Verdict { SatisfiedOnSamples, Violated, Fails, Inconclusive };
std::string to_string(Verdict v);

struct CheckOptions {
  int samples_per_state = 100;
  std::uint64_t seed = 0;
  double satisfied_tol = 1e-9;  // on the normalized form
  double violation_tol = 1e-6;
  std::vector<double> radii = {1.0, 10.0};
};

struct ConditionReport {
  std::string condition;
  std::string operator_name;
  int n = 0;
  Verdict verdict = Verdict::Inconclusive;
  double max_value = 0.0;       // raw form value at the normalized arg-max
  double max_normalized = 0.0;  // max of value / scale
  std::optional<AugmentedState> witness_state;
  std::optional<TangentVector> witness_tangent;
  long samples = 0;
  std::uint64_t seed = 0;
  std::string note;
};

/// scale = (1 + |jet|_inf^2) * max(1, |v|_inf^2).
double form_scale(const OperatorJet& jet, const TangentVector& v);

/// Samples the structural form H on constrained tangents.
ConditionReport check_local_convexity(const OperatorSpec& spec,
                                      const std::vector<AugmentedState>& states,
                                      const CheckOptions& opt);

/// Samples the operator form S; S > 0 certifies that the stronger
/// augmented-set convexity fails.
ConditionReport check_augmented_convexity_necessary(const OperatorSpec& spec,
                                                    const std::vector<AugmentedState>& states,
                                                    const CheckOptions& opt);

struct ConvexityProbe {
  std::function<bool(const VectorXd&)> member;
  std::function<std::pair<VectorXd, VectorXd>(std::mt19937_64&)> sample_pair;
};

struct MidpointWitness {
  VectorXd a, b, midpoint;
  long pair_index = 0;
};

/// First sampled member pair whose midpoint is not a member. Pairs with a
/// non-member or coincident endpoint are skipped.
std::optional<MidpointWitness> midpoint_convexity_falsifier(const ConvexityProbe& probe,
                                                            long pairs, std::uint64_t seed);

/// Probe for {(A, t) : F(A / t^3, e_n / t, u, x) >= 0} at fixed (u, x).
/// Points are the upper triangle of A followed by t. Pairs are drawn near
/// the boundary with separation `spread`.
ConvexityProbe augmented_set_probe(const OperatorSpec& spec, double u, const VectorXd& x,
                                   double spread = 0.05);

}  // namespace qconv::structcheck
