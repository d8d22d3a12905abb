#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qconv/levelgeom.hpp"
#include "qconv/pdesolve.hpp"

/// Level sets of solved or analytic fields: curvature profiles, the
/// exponential curvature lower bound, constant-rank scans, the region where
/// the operator-dependent branch of the bound is active, and circularity.
namespace qconv::estimator {

using Eigen::Vector2d;
using Eigen::VectorXd;
using levelgeom::CurvatureSample;
using levelgeom::Jet3;
using pdesolve::AnalyticField;
using pdesolve::GridField;

inline constexpr double kLevelMin = 0.05;
inline constexpr double kLevelMax = 0.95;

/// 19 levels, 0.05 to 0.95 in steps of 0.05.
std::vector<double> default_levels();

struct LevelPoint {
  VectorXd x;
  Jet3 jet;
  CurvatureSample curvature;
  bool gradient_ok = true;  // |Du| >= d0; curvature is unset otherwise
};

struct LevelCurve {
  std::vector<LevelPoint> points;  // counterclockwise in the plane
  double length = 0.0;
  int winding = 0;  // around the inner curve's centre
};

struct LevelSetSample {
  double c = 0.0;
  double spacing = 0.0;
  std::vector<LevelCurve> curves;
  double kappa_min = 0.0;  // sampled infimum, refined near the argmin
  VectorXd kappa_argmin;
  double max_level_error = 0.0;  // max |u(x) - c| over the points
  double min_grad = 0.0;
  bool gradient_ok = true;

  std::size_t point_count() const;
};

struct ExtractOptions {
  double spacing = 0.0;  // arclength target; 0 means h / 2
  double d0 = levelgeom::kDefaultD0;
  double c_min = kLevelMin;
  double c_max = kLevelMax;
  bool refine_argmin = true;
};

/// Marching squares on the grid, loops oriented counterclockwise, resampled
/// at the target spacing and projected onto the level to 1e-8 in u.
/// Throws LevelRangeError for c outside [c_min, c_max], an empty level or an
/// open curve, and when the level runs too close to the boundary for jets.
LevelSetSample extract_level(const GridField& g, double c, const ExtractOptions& opt = {});

/// Exact level points of an analytic field (any dimension).
LevelSetSample analytic_level(const AnalyticField& f, double c, int count,
                              const ExtractOptions& opt = {});

struct LevelSummary {
  double c = 0.0;
  double kappa = 0.0;
  int rank = 0;  // smallest rank over the level's points
  double min_grad = 0.0;
  bool flagged = false;
  std::string flag;
};

struct KappaProfile {
  std::vector<LevelSummary> levels;
  double kappa0 = 0.0;  // minimum curvature of the outer boundary (u = 0)
  double kappa1 = 0.0;  // minimum curvature of the inner boundary (u = 1)
  double lambda = 1.0;
  double varpi = 0.0;  // 0 drops the operator-dependent branch of the bound
};

/// Levels whose extraction fails or violates the gradient floor are kept,
/// flagged, in the profile.
KappaProfile kappa_profile(const GridField& g, const std::vector<double>& levels,
                           const ExtractOptions& opt = {});
/// Boundary curvatures are 1/R0 and 1/R1 for the radial kinds.
KappaProfile kappa_profile(const AnalyticField& f, const std::vector<double>& levels, int count,
                           const ExtractOptions& opt = {});

/// min{kappa0 e^{Ac}, kappa1 e^{A(c-1)}, lambda e^{A(c-1)} / (100 varpi)};
/// the last term is dropped when varpi = 0.
double bound_rhs(const KappaProfile& p, double c, double A);

struct BoundScanPoint {
  double A = 0.0;
  bool feasible = false;
  double worst_margin = 0.0;  // min over levels of kappa^c - (1 - slack) rhs
  double worst_c = 0.0;
};

struct BoundReport {
  std::vector<BoundScanPoint> scan;
  std::vector<std::pair<double, double>> feasible_intervals;  // endpoints refined
  double slack = 0.0;
  bool varpi_dropped = false;
  int flagged_levels = 0;  // ignored in the check

  /// Whether some feasible interval covers [lo, hi].
  bool covers(double lo, double hi) const;
  bool feasible_at(double A) const;
};

/// Throws std::invalid_argument for an empty profile, lambda <= 0 or
/// varpi < 0.
BoundReport verify_bound(const KappaProfile& p, double A_max, int A_steps, double slack);

/// Levels where kappa^c equals the bound within relative `tol` at this A.
std::vector<double> equality_levels(const KappaProfile& p, double A, double tol = 1e-3);

struct RankLevel {
  double c = 0.0;
  int min_rank = 0;
  int max_rank = 0;
  double min_shifted = 0.0;  // smallest shifted principal curvature
  VectorXd min_point;
  bool gradient_ok = true;
  int components = 0;  // extracted curves; the scan assumes a connected window
};

struct RankReport {
  std::vector<RankLevel> levels;
  bool constant = true;
  int rank = 0;  // rank of the first level
  std::optional<double> change_level;
  std::optional<VectorXd> change_point;
  double eta0 = 0.0, A = 0.0;

  std::string verdict() const { return constant ? "CONSTANT" : "CHANGES"; }
};

/// Rank of a - eta0 e^{Au} I counted as eigenvalues above `tol`; the default
/// tolerance is levelgeom::default_rank_tol of the unshifted tensor.
RankReport constant_rank_scan(const std::vector<LevelSetSample>& samples, double eta0, double A,
                              std::optional<double> tol = std::nullopt);
RankReport constant_rank_scan(const GridField& g, const std::vector<double>& levels, double eta0,
                              double A, std::optional<double> tol = std::nullopt,
                              const ExtractOptions& opt = {});
RankReport constant_rank_scan(const AnalyticField& f, const std::vector<double>& levels, int count,
                              double eta0, double A, std::optional<double> tol = std::nullopt);

struct RegionReport {
  enum Cell : std::uint8_t { Outside = 0, Inside = 1, Unavailable = 2 };
  std::vector<std::uint8_t> mask;  // per grid node
  bool full_domain = false;
  double threshold = 0.0;  // lambda / (100 varpi)
  long inside = 0, omega_nodes = 0, unavailable = 0;
  std::string note;
};

/// Nodes with 0 < kappa_s < lambda / (100 varpi). For varpi = 0 every Omega
/// node is in the region and `full_domain` is set. Nodes too close to the
/// boundary for a jet are marked Unavailable.
RegionReport omega_varpi_region(const GridField& g, double lambda, double varpi);

struct RigidityReport {
  Vector2d center = Vector2d::Zero();
  double radius = 0.0;
  double radius_deviation = 0.0;  // max |r_i - r| / r
  double kappa_spread = 0.0;      // (max - min) / mean of kappa_s
  int points = 0;
  bool near_rigid = false;
};

/// Least-squares circle through planar points. Throws std::invalid_argument
/// with fewer than 8 points or a degenerate (collinear) fit.
RigidityReport rigidity_probe(const std::vector<Vector2d>& points,
                              const std::vector<double>& kappas);
RigidityReport rigidity_probe(const LevelSetSample& sample);

}  // namespace qconv::estimator
