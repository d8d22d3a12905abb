#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qconv/operators.hpp"
#include "qconv/pdesolve.hpp"

/// Subcommands over one declarative YAML config. Exit codes: 0 success,
/// 1 verification failure or solver non-convergence, 2 usage or config error.
namespace qconv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailed = 1;
inline constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AnalyticConfig {
  std::string kind;  // harmonic_annulus, radial_poisson, sphere, ellipsoidal, cylinder_annulus
  int n = 2;
  double r_inner = 1.0, r_outer = 2.0;
  double poisson_rhs = 0.0;
  std::vector<double> semi_axes;
  int count = 64;  // points per level

  pdesolve::AnalyticField build() const;
};

struct RunConfig {
  std::string operator_name = "laplace_f";
  operators::OperatorParams params;
  std::vector<int> check_dims = {2, 3};

  std::optional<pdesolve::RingDomain2D> domain;
  std::optional<AnalyticConfig> analytic;  // replaces the solve when present
  double h = 1.0 / 32;
  std::vector<double> levels;  // default_levels() when the key is absent
  double tol = 1e-10;
  int max_iter = 200;

  double profile_A = 0.0;  // exponent used for the profile's bound columns
  double A_max = 2.0;
  int A_steps = 201;
  double slack = 1e-3;
  double lambda = 1.0;
  double varpi = 0.0;
  std::optional<std::pair<double, double>> expect_cover;
  std::vector<double> expect_infeasible;  // exponents that must fail the bound

  double eta0 = 0.0;
  double rank_A = 0.0;
  std::optional<double> rank_tol;
  std::string expect_rank = "CONSTANT";

  int states = 200;
  int samples_per_state = 100;
  std::uint64_t seed = 0;
  long midpoint_pairs = 20000;
  double probe_u = 0.5;
  std::optional<std::string> expect_local, expect_augmented;

  std::optional<std::string> input_field;  // read instead of solving
  std::string out_dir = ".";
  std::string field_file = "field.bin";  // .csv selects the text format
  std::string log_file = "convergence.csv";
  std::string profile_file = "profile.csv";
  std::string report_file = "report.json";
  std::string svg_file = "contours.svg";
};

/// Parses YAML text, then applies `key.path=value` overrides. Throws
/// UsageError on unknown keys, malformed values or an empty level list.
RunConfig parse_config(const std::string& yaml_text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});

struct Options {
  bool svg = false;
};

int cmd_solve(const RunConfig& cfg, const Options& opt, std::ostream& out);
int cmd_curvature(const RunConfig& cfg, const Options& opt, std::ostream& out);
int cmd_verify_bound(const RunConfig& cfg, const Options& opt, std::ostream& out);
int cmd_scan_rank(const RunConfig& cfg, const Options& opt, std::ostream& out);
int cmd_check_operator(const RunConfig& cfg, const Options& opt, std::ostream& out);
int cmd_selftest(std::ostream& out);

/// Loads the config (unless the command is selftest), runs the command and
/// maps exceptions to exit codes with a diagnostic on `err`.
int dispatch(const std::string& command, const std::string& config_path,
             const std::vector<std::string>& overrides, const Options& opt, std::ostream& out,
             std::ostream& err);

}  // namespace qconv::cli
