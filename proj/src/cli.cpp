#include "qconv/cli.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "json.hpp"
#include "qconv/error.hpp"
#include "qconv/estimator.hpp"
#include "qconv/structcheck.hpp"
#include "qconv/symfun.hpp"

namespace qconv::cli {

namespace {

using json = nlohmann::ordered_json;
using domain::ConvexCurve;
using Eigen::Vector2d;

// Rejects keys outside `allowed` so that typos fail loudly.
void check_keys(const YAML::Node& node, const std::string& where, std::set<std::string> allowed) {
  if (!node.IsMap()) throw UsageError("'" + where + "' must be a table");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw UsageError("unknown config key '" + where + "." + key + "'");
  }
}

double as_double(const YAML::Node& n, const std::string& key) {
  try {
    const auto text = n.as<std::string>();
    // Fractions such as 1/64 are accepted for grid spacings.
    if (const auto slash = text.find('/'); slash != std::string::npos) {
      return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
    }
    return n.as<double>();
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' must be a number");
  }
}

template <class T>
T as(const YAML::Node& n, const std::string& key) {
  try {
    return n.as<T>();
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "' has the wrong type");
  }
}

Vector2d as_point(const YAML::Node& n, const std::string& key) {
  if (!n.IsSequence() || n.size() != 2) throw UsageError("config key '" + key + "' must be [x, y]");
  return {as_double(n[0], key), as_double(n[1], key)};
}

std::vector<double> as_list(const YAML::Node& n, const std::string& key) {
  if (!n.IsSequence()) throw UsageError("config key '" + key + "' must be a list");
  std::vector<double> v;
  for (std::size_t i = 0; i < n.size(); ++i) v.push_back(as_double(n[i], key));
  return v;
}

ConvexCurve parse_curve(const YAML::Node& n, const std::string& where) {
  check_keys(n, where, {"kind", "center", "radius", "a", "b", "angle", "vertices", "rounding"});
  const auto kind = as<std::string>(n["kind"], where + ".kind");
  const Vector2d c = n["center"] ? as_point(n["center"], where + ".center") : Vector2d::Zero();
  if (kind == "circle") {
    const double r = as_double(n["radius"], where + ".radius");
    if (!(r > 0.0)) throw UsageError(where + ": circle radius must be positive");
    return ConvexCurve::circle(c, r);
  }
  if (kind == "ellipse") {
    const double a = as_double(n["a"], where + ".a"), b = as_double(n["b"], where + ".b");
    if (!(a > 0.0 && b > 0.0)) throw UsageError(where + ": ellipse semi-axes must be positive");
    return ConvexCurve::ellipse(c, a, b, n["angle"] ? as_double(n["angle"], where + ".angle") : 0.0);
  }
  if (kind == "polygon") {
    const auto& vs = n["vertices"];
    if (!vs || !vs.IsSequence()) throw UsageError(where + ": polygon needs a vertex list");
    std::vector<Vector2d> pts;
    for (std::size_t i = 0; i < vs.size(); ++i) pts.push_back(as_point(vs[i], where + ".vertices"));
    try {
      return ConvexCurve::rounded_polygon(pts, as_double(n["rounding"], where + ".rounding"));
    } catch (const std::invalid_argument& e) {
      throw UsageError(where + ": " + e.what());
    }
  }
  throw UsageError(where + ": unknown curve kind '" + kind + "'");
}

operators::ScalarFn parse_scalar_fn(const YAML::Node& n) {
  using operators::ScalarFn;
  if (n.IsScalar()) return ScalarFn::constant(as_double(n, "operator.f"));
  check_keys(n, "operator.f", {"kind", "value", "c0", "c1", "amp", "rate"});
  const auto kind = as<std::string>(n["kind"], "operator.f.kind");
  auto get = [&](const char* k) { return n[k] ? as_double(n[k], std::string("operator.f.") + k) : 0.0; };
  if (kind == "constant") return ScalarFn::constant(get("value"));
  if (kind == "linear") return ScalarFn::linear(get("c0"), get("c1"));
  if (kind == "exponential") return ScalarFn::exponential(get("amp"), get("rate"));
  throw UsageError("operator.f: unknown kind '" + kind + "'");
}

void parse_operator(const YAML::Node& n, RunConfig& cfg) {
  check_keys(n, "operator", {"name", "f", "p", "eps_p", "lambda", "Lambda", "tau", "side", "beta", "dims"});
  if (n["name"]) cfg.operator_name = as<std::string>(n["name"], "operator.name");
  auto& p = cfg.params;
  if (n["f"]) p.f = parse_scalar_fn(n["f"]);
  if (n["p"]) p.p_exponent = as_double(n["p"], "operator.p");
  if (n["eps_p"]) p.eps_p = as_double(n["eps_p"], "operator.eps_p");
  if (n["lambda"]) p.lambda = as_double(n["lambda"], "operator.lambda");
  if (n["Lambda"]) p.Lambda = as_double(n["Lambda"], "operator.Lambda");
  if (n["tau"]) p.tau = as_double(n["tau"], "operator.tau");
  if (n["beta"]) p.beta = as_double(n["beta"], "operator.beta");
  if (n["side"]) {
    const auto s = as<std::string>(n["side"], "operator.side");
    if (s == "maximal") {
      p.side = operators::PucciSide::Maximal;
    } else if (s == "minimal") {
      p.side = operators::PucciSide::Minimal;
    } else {
      throw UsageError("operator.side must be maximal or minimal");
    }
  }
  if (n["dims"]) {
    cfg.check_dims.clear();
    for (double d : as_list(n["dims"], "operator.dims")) cfg.check_dims.push_back(static_cast<int>(d));
    if (cfg.check_dims.empty()) throw UsageError("operator.dims is empty");
  }
}

void parse_analytic(const YAML::Node& n, RunConfig& cfg) {
  check_keys(n, "analytic", {"kind", "n", "r_inner", "r_outer", "rhs", "semi_axes", "count"});
  AnalyticConfig a;
  a.kind = as<std::string>(n["kind"], "analytic.kind");
  if (n["n"]) a.n = as<int>(n["n"], "analytic.n");
  if (n["r_inner"]) a.r_inner = as_double(n["r_inner"], "analytic.r_inner");
  if (n["r_outer"]) a.r_outer = as_double(n["r_outer"], "analytic.r_outer");
  if (n["rhs"]) a.poisson_rhs = as_double(n["rhs"], "analytic.rhs");
  if (n["semi_axes"]) a.semi_axes = as_list(n["semi_axes"], "analytic.semi_axes");
  if (n["count"]) a.count = as<int>(n["count"], "analytic.count");
  if (a.count < 8) throw UsageError("analytic.count must be at least 8");
  try {
    a.build();
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("analytic: ") + e.what());
  }
  cfg.analytic = a;
}

void apply_override(YAML::Node& root, const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("override '" + item + "' is not key=value");
  const std::string path = item.substr(0, eq);
  YAML::Node value;
  try {
    value = YAML::Load(item.substr(eq + 1));
  } catch (const YAML::Exception& e) {
    throw UsageError("override '" + item + "': " + e.what());
  }
  YAML::Node cur = root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw UsageError("override '" + item + "' has an empty key");
    if (dot == std::string::npos) {
      cur[key] = value;
      return;
    }
    if (cur[key] && !cur[key].IsMap()) throw UsageError("override '" + item + "' descends into a non-table");
    YAML::Node next = cur[key];
    cur.reset(next);
    start = dot + 1;
  }
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  std::filesystem::path p(name);
  if (p.is_absolute()) return name;
  return (std::filesystem::path(cfg.out_dir) / p).string();
}

bool csv_name(const std::string& path) {
  return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
}

const pdesolve::RingDomain2D& need_domain(const RunConfig& cfg) {
  if (!cfg.domain) throw UsageError("this command needs a 'domain' table");
  return *cfg.domain;
}

std::vector<double> levels_of(const RunConfig& cfg) {
  return cfg.levels.empty() ? estimator::default_levels() : cfg.levels;
}

// Solved field, a field file, or an analytic field sampled on the grid.
pdesolve::GridField obtain_field(const RunConfig& cfg, std::ostream& out) {
  const auto& dom = need_domain(cfg);
  if (cfg.input_field) {
    out << "reading field " << *cfg.input_field << "\n";
    return csv_name(*cfg.input_field) ? pdesolve::read_csv(*cfg.input_field, dom)
                                      : pdesolve::read_binary(*cfg.input_field, dom);
  }
  if (cfg.analytic) return pdesolve::sample_to_grid(cfg.analytic->build(), dom, cfg.h);
  const auto spec = operators::builtin(cfg.operator_name, 2, cfg.params);
  auto g = pdesolve::solve(spec, dom, cfg.h, cfg.tol, cfg.max_iter);
  out << "solved " << spec.name() << " at h = " << cfg.h << " in " << g.log.size()
      << " iterations, residual " << g.final_residual << "\n";
  return g;
}

estimator::KappaProfile build_profile(const RunConfig& cfg, std::ostream& out) {
  estimator::KappaProfile p;
  if (cfg.analytic && !cfg.domain) {
    p = estimator::kappa_profile(cfg.analytic->build(), levels_of(cfg), cfg.analytic->count);
  } else {
    p = estimator::kappa_profile(obtain_field(cfg, out), levels_of(cfg));
  }
  p.lambda = cfg.lambda;
  p.varpi = cfg.varpi;
  return p;
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
    std::filesystem::create_directories(dir);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

json point_json(const Eigen::VectorXd& x) {
  json a = json::array();
  for (int i = 0; i < x.size(); ++i) a.push_back(x(i));
  return a;
}

void write_svg(const pdesolve::GridField& g, const std::vector<double>& levels, const std::string& path) {
  const auto [lo, hi] = g.domain.outer.bounds();
  const double size = 640.0, pad = 20.0;
  const double scale = (size - 2 * pad) / std::max(hi.x() - lo.x(), hi.y() - lo.y());
  auto sx = [&](const Vector2d& x) { return fmt(pad + (x.x() - lo.x()) * scale); };
  auto sy = [&](const Vector2d& x) { return fmt(size - pad - (x.y() - lo.y()) * scale); };
  auto px = [&](const Vector2d& x) { return sx(x) + "," + sy(x); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
     << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  for (const auto* curve : {&g.domain.outer, &g.domain.inner}) {
    os << "<polygon fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : curve->sample(256)) os << px(p) << " ";
    os << "\"/>\n";
  }
  // Segments are coloured by kappa_s on a blue-to-red ramp over the drawn range.
  std::vector<estimator::LevelSetSample> drawn;
  double kmin = std::numeric_limits<double>::infinity(), kmax = -kmin;
  for (double c : levels) {
    try {
      drawn.push_back(estimator::extract_level(g, c));
    } catch (const std::runtime_error&) {
      continue;  // levels unavailable at this spacing are left out of the picture
    }
    for (const auto& curve : drawn.back().curves) {
      for (const auto& p : curve.points) {
        if (!p.gradient_ok) continue;
        kmin = std::min(kmin, p.curvature.kappa_s);
        kmax = std::max(kmax, p.curvature.kappa_s);
      }
    }
  }
  auto colour = [&](double k) {
    const double t = kmax > kmin ? std::clamp((k - kmin) / (kmax - kmin), 0.0, 1.0) : 0.5;
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(255 * t), 64,
                  static_cast<int>(255 * (1 - t)));
    return std::string(buf);
  };
  for (const auto& s : drawn) {
    for (const auto& curve : s.curves) {
      os << "<g data-level=\"" << fmt(s.c) << "\" stroke-width=\"1.2\">\n";
      const std::size_t m = curve.points.size();
      for (std::size_t i = 0; i < m; ++i) {
        const auto& a = curve.points[i];
        const auto& b = curve.points[(i + 1) % m];
        const std::string stroke =
            a.gradient_ok && b.gradient_ok ? colour(0.5 * (a.curvature.kappa_s + b.curvature.kappa_s)) : "gray";
        const Vector2d pa = a.x.head<2>(), pb = b.x.head<2>();
        os << "<line x1=\"" << sx(pa) << "\" y1=\"" << sy(pa) << "\" x2=\"" << sx(pb) << "\" y2=\"" << sy(pb)
           << "\" stroke=\"" << stroke << "\"/>\n";
      }
      os << "</g>\n";
    }
  }
  if (!drawn.empty() && kmax >= kmin) {
    os << "<text x=\"" << pad << "\" y=\"" << pad - 6 << "\" font-size=\"11\">kappa_s " << fmt(kmin) << " (blue) to "
       << fmt(kmax) << " (red)</text>\n";
  }
  os << "</svg>\n";
  write_text(path, os.str());
}

json condition_json(const structcheck::ConditionReport& r) {
  json j;
  j["condition"] = r.condition;
  j["operator"] = r.operator_name;
  j["n"] = r.n;
  j["verdict"] = structcheck::to_string(r.verdict);
  j["max_value"] = r.max_value;
  j["max_normalized"] = r.max_normalized;
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  if (!r.note.empty()) j["note"] = r.note;
  if (r.witness_state) {
    const auto& s = *r.witness_state;
    j["witness"] = {{"t", s.t}, {"tangential", point_json(s.tangential)}, {"cross", point_json(s.cross)},
                    {"u", s.u}, {"x", point_json(s.x)}};
  }
  return j;
}

}  // namespace

pdesolve::AnalyticField AnalyticConfig::build() const {
  using pdesolve::AnalyticField;
  if (kind == "harmonic_annulus") return AnalyticField::harmonic_annulus(n, r_inner, r_outer);
  if (kind == "radial_poisson") return AnalyticField::radial_poisson(n, poisson_rhs, r_inner, r_outer);
  if (kind == "sphere") return AnalyticField::sphere(n);
  if (kind == "ellipsoidal") {
    return AnalyticField::ellipsoidal(Eigen::Map<const Eigen::VectorXd>(semi_axes.data(),
                                                                        static_cast<Eigen::Index>(semi_axes.size())));
  }
  if (kind == "cylinder_annulus") return AnalyticField::cylinder_annulus(r_inner, r_outer);
  throw std::invalid_argument("unknown analytic field kind '" + kind + "'");
}

RunConfig parse_config(const std::string& yaml_text, const std::vector<std::string>& overrides) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw UsageError(std::string("config is not valid YAML: ") + e.what());
  }
  if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  for (const auto& o : overrides) apply_override(root, o);
  check_keys(root, "config",
             {"operator", "domain", "analytic", "grid", "solver", "levels", "bound", "rank", "check", "input",
              "output"});

  RunConfig cfg;
  if (root["operator"]) parse_operator(root["operator"], cfg);
  if (const auto d = root["domain"]) {
    check_keys(d, "domain", {"outer", "inner"});
    if (!d["outer"] || !d["inner"]) throw UsageError("domain needs both 'outer' and 'inner'");
    cfg.domain = pdesolve::RingDomain2D{parse_curve(d["outer"], "domain.outer"), parse_curve(d["inner"], "domain.inner")};
  }
  if (root["analytic"]) parse_analytic(root["analytic"], cfg);
  if (const auto g = root["grid"]) {
    check_keys(g, "grid", {"h"});
    if (g["h"]) cfg.h = as_double(g["h"], "grid.h");
    if (!(cfg.h > 0.0)) throw UsageError("grid.h must be positive");
  }
  if (const auto s = root["solver"]) {
    check_keys(s, "solver", {"tol", "max_iter"});
    if (s["tol"]) cfg.tol = as_double(s["tol"], "solver.tol");
    if (s["max_iter"]) cfg.max_iter = as<int>(s["max_iter"], "solver.max_iter");
  }
  if (const auto l = root["levels"]) {
    if (l.IsScalar() && l.as<std::string>() == "default") {
      cfg.levels = estimator::default_levels();
    } else {
      cfg.levels = as_list(l, "levels");
      if (cfg.levels.empty()) throw UsageError("levels is empty");
    }
  }
  if (const auto b = root["bound"]) {
    check_keys(b, "bound", {"A", "A_max", "A_steps", "slack", "lambda", "varpi", "expect_cover", "expect_infeasible"});
    if (b["A"]) cfg.profile_A = as_double(b["A"], "bound.A");
    if (b["A_max"]) cfg.A_max = as_double(b["A_max"], "bound.A_max");
    if (b["A_steps"]) cfg.A_steps = as<int>(b["A_steps"], "bound.A_steps");
    if (b["slack"]) cfg.slack = as_double(b["slack"], "bound.slack");
    if (b["lambda"]) cfg.lambda = as_double(b["lambda"], "bound.lambda");
    if (b["varpi"]) cfg.varpi = as_double(b["varpi"], "bound.varpi");
    if (b["expect_cover"]) {
      const auto v = as_list(b["expect_cover"], "bound.expect_cover");
      if (v.size() != 2 || !(v[0] <= v[1])) throw UsageError("bound.expect_cover must be [lo, hi]");
      cfg.expect_cover = std::make_pair(v[0], v[1]);
    }
    if (b["expect_infeasible"]) cfg.expect_infeasible = as_list(b["expect_infeasible"], "bound.expect_infeasible");
  }
  if (const auto r = root["rank"]) {
    check_keys(r, "rank", {"eta0", "A", "tol", "expect"});
    if (r["eta0"]) cfg.eta0 = as_double(r["eta0"], "rank.eta0");
    if (r["A"]) cfg.rank_A = as_double(r["A"], "rank.A");
    if (r["tol"]) cfg.rank_tol = as_double(r["tol"], "rank.tol");
    if (r["expect"]) cfg.expect_rank = as<std::string>(r["expect"], "rank.expect");
    if (cfg.expect_rank != "CONSTANT" && cfg.expect_rank != "CHANGES") {
      throw UsageError("rank.expect must be CONSTANT or CHANGES");
    }
  }
  if (const auto c = root["check"]) {
    check_keys(c, "check", {"states", "samples_per_state", "seed", "midpoint_pairs", "u", "expect"});
    if (c["states"]) cfg.states = as<int>(c["states"], "check.states");
    if (c["samples_per_state"]) cfg.samples_per_state = as<int>(c["samples_per_state"], "check.samples_per_state");
    if (c["seed"]) cfg.seed = as<std::uint64_t>(c["seed"], "check.seed");
    if (c["midpoint_pairs"]) cfg.midpoint_pairs = as<long>(c["midpoint_pairs"], "check.midpoint_pairs");
    if (c["u"]) cfg.probe_u = as_double(c["u"], "check.u");
    if (const auto e = c["expect"]) {
      check_keys(e, "check.expect", {"local", "augmented"});
      if (e["local"]) cfg.expect_local = as<std::string>(e["local"], "check.expect.local");
      if (e["augmented"]) cfg.expect_augmented = as<std::string>(e["augmented"], "check.expect.augmented");
    }
    if (cfg.states < 1 || cfg.samples_per_state < 1) throw UsageError("check counts must be positive");
  }
  if (const auto i = root["input"]) {
    check_keys(i, "input", {"field"});
    if (i["field"]) cfg.input_field = as<std::string>(i["field"], "input.field");
  }
  if (const auto o = root["output"]) {
    check_keys(o, "output", {"dir", "field", "log", "profile", "report", "svg"});
    if (o["dir"]) cfg.out_dir = as<std::string>(o["dir"], "output.dir");
    if (o["field"]) cfg.field_file = as<std::string>(o["field"], "output.field");
    if (o["log"]) cfg.log_file = as<std::string>(o["log"], "output.log");
    if (o["profile"]) cfg.profile_file = as<std::string>(o["profile"], "output.profile");
    if (o["report"]) cfg.report_file = as<std::string>(o["report"], "output.report");
    if (o["svg"]) cfg.svg_file = as<std::string>(o["svg"], "output.svg");
  }
  return cfg;
}

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw UsageError("cannot read config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), overrides);
}

int cmd_solve(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  const auto g = obtain_field(cfg, out);
  const auto field = out_path(cfg, cfg.field_file);
  if (const auto dir = std::filesystem::path(field).parent_path(); !dir.empty()) {
    std::filesystem::create_directories(dir);
  }
  if (csv_name(field)) {
    pdesolve::write_csv(g, field);
  } else {
    pdesolve::write_binary(g, field);
  }
  std::ostringstream log;
  log << "iteration,update,residual\n";
  for (const auto& r : g.log) log << r.iteration << "," << fmt(r.update) << "," << fmt(r.residual) << "\n";
  write_text(out_path(cfg, cfg.log_file), log.str());
  out << "field written to " << field << "\n";
  if (opt.svg) write_svg(g, levels_of(cfg), out_path(cfg, cfg.svg_file));
  return kExitOk;
}

int cmd_curvature(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  estimator::KappaProfile p;
  if (cfg.analytic && !cfg.domain) {
    p = build_profile(cfg, out);
  } else {
    const auto g = obtain_field(cfg, out);
    p = estimator::kappa_profile(g, levels_of(cfg));
    p.lambda = cfg.lambda;
    p.varpi = cfg.varpi;
    if (opt.svg) write_svg(g, levels_of(cfg), out_path(cfg, cfg.svg_file));
  }
  std::ostringstream csv;
  csv << "c,kappa_c,rank,bound_rhs_at_A,margin,flag\n";
  int flagged = 0;
  for (const auto& l : p.levels) {
    const double rhs = estimator::bound_rhs(p, l.c, cfg.profile_A);
    csv << fmt(l.c) << ",";
    if (l.flagged) {
      ++flagged;
      std::string why = l.flag;
      for (char& ch : why) {
        if (ch == ',' || ch == '\n') ch = ';';
      }
      csv << ",," << fmt(rhs) << ",," << why << "\n";
    } else {
      csv << fmt(l.kappa) << "," << l.rank << "," << fmt(rhs) << "," << fmt(l.kappa - rhs) << ",\n";
    }
  }
  const auto path = out_path(cfg, cfg.profile_file);
  write_text(path, csv.str());
  out << "profile of " << p.levels.size() << " levels (" << flagged << " flagged) written to " << path
      << "; boundary curvatures " << fmt(p.kappa0) << " and " << fmt(p.kappa1) << "\n";
  return kExitOk;
}

int cmd_verify_bound(const RunConfig& cfg, const Options&, std::ostream& out) {
  const auto p = build_profile(cfg, out);
  const auto r = estimator::verify_bound(p, cfg.A_max, cfg.A_steps, cfg.slack);
  json j;
  j["command"] = "verify-bound";
  j["kappa0"] = p.kappa0;
  j["kappa1"] = p.kappa1;
  j["lambda"] = p.lambda;
  j["varpi"] = p.varpi;
  j["varpi_dropped"] = r.varpi_dropped;
  j["slack"] = r.slack;
  j["flagged_levels"] = r.flagged_levels;
  json iv = json::array();
  for (const auto& [a, b] : r.feasible_intervals) iv.push_back({a, b});
  j["feasible_intervals"] = iv;
  json scan = json::array();
  for (const auto& s : r.scan) {
    scan.push_back({{"A", s.A}, {"feasible", s.feasible}, {"worst_margin", s.worst_margin}, {"worst_c", s.worst_c}});
  }
  j["scan"] = scan;

  bool ok = !r.feasible_intervals.empty();
  if (cfg.expect_cover) {
    const bool covered = r.covers(cfg.expect_cover->first, cfg.expect_cover->second);
    j["expect_cover"] = {{"interval", {cfg.expect_cover->first, cfg.expect_cover->second}}, {"covered", covered}};
    ok = ok && covered;
  }
  json inf = json::array();
  for (double A : cfg.expect_infeasible) {
    const bool feasible = r.feasible_at(A);
    inf.push_back({{"A", A}, {"feasible", feasible}});
    ok = ok && !feasible;
  }
  if (!cfg.expect_infeasible.empty()) j["expect_infeasible"] = inf;
  j["verdict"] = ok ? "PASS" : "FAIL";
  const auto path = out_path(cfg, cfg.report_file);
  write_text(path, j.dump(2) + "\n");
  out << "bound " << (ok ? "PASS" : "FAIL") << ": " << r.feasible_intervals.size()
      << " feasible interval(s); report written to " << path << "\n";
  return ok ? kExitOk : kExitFailed;
}

int cmd_scan_rank(const RunConfig& cfg, const Options&, std::ostream& out) {
  estimator::RankReport r;
  if (cfg.analytic && !cfg.domain) {
    r = estimator::constant_rank_scan(cfg.analytic->build(), levels_of(cfg), cfg.analytic->count, cfg.eta0,
                                      cfg.rank_A, cfg.rank_tol);
  } else {
    r = estimator::constant_rank_scan(obtain_field(cfg, out), levels_of(cfg), cfg.eta0, cfg.rank_A, cfg.rank_tol);
  }
  json j;
  j["command"] = "scan-rank";
  j["eta0"] = r.eta0;
  j["A"] = r.A;
  j["verdict"] = r.verdict();
  j["rank"] = r.rank;
  if (r.change_level) j["change_level"] = *r.change_level;
  if (r.change_point) j["change_point"] = point_json(*r.change_point);
  json lv = json::array();
  for (const auto& l : r.levels) {
    lv.push_back({{"c", l.c},
                  {"min_rank", l.min_rank},
                  {"max_rank", l.max_rank},
                  {"min_shifted", l.min_shifted},
                  {"min_point", point_json(l.min_point)},
                  {"gradient_ok", l.gradient_ok},
                  {"components", l.components},
                  {"connected", l.components == 1}});
  }
  j["levels"] = lv;
  const bool ok = r.verdict() == cfg.expect_rank;
  j["expected"] = cfg.expect_rank;
  const auto path = out_path(cfg, cfg.report_file);
  write_text(path, j.dump(2) + "\n");
  out << "rank " << r.verdict() << " (rank " << r.rank << ", expected " << cfg.expect_rank
      << "); report written to " << path << "\n";
  return ok ? kExitOk : kExitFailed;
}

int cmd_check_operator(const RunConfig& cfg, const Options&, std::ostream& out) {
  json reports = json::array();
  bool ok = true;
  for (int n : cfg.check_dims) {
    const auto spec = operators::builtin(cfg.operator_name, n, cfg.params);
    const auto states = structcheck::sample_level_states(spec, cfg.states, cfg.seed);
    structcheck::CheckOptions co;
    co.samples_per_state = cfg.samples_per_state;
    co.seed = cfg.seed;
    const auto local = structcheck::check_local_convexity(spec, states, co);
    const auto aug = structcheck::check_augmented_convexity_necessary(spec, states, co);
    const auto probe = structcheck::augmented_set_probe(spec, cfg.probe_u, Eigen::VectorXd::Zero(n));
    const auto mid = structcheck::midpoint_convexity_falsifier(probe, cfg.midpoint_pairs, cfg.seed);

    json j;
    j["operator"] = spec.name();
    j["n"] = n;
    j["local_convexity"] = condition_json(local);
    j["augmented_convexity"] = condition_json(aug);
    json m;
    m["pairs"] = cfg.midpoint_pairs;
    m["falsified"] = mid.has_value();
    if (mid) {
      m["a"] = point_json(mid->a);
      m["b"] = point_json(mid->b);
      m["pair_index"] = mid->pair_index;
    }
    j["midpoint_convexity"] = m;
    reports.push_back(j);

    const auto lv = structcheck::to_string(local.verdict), av = structcheck::to_string(aug.verdict);
    out << spec.name() << " n=" << n << ": local " << lv << ", augmented " << av << ", midpoint "
        << (mid ? "FALSIFIED" : "no witness") << "\n";
    if (cfg.expect_local && *cfg.expect_local != lv) ok = false;
    if (cfg.expect_augmented && *cfg.expect_augmented != av) ok = false;
  }
  json j;
  j["command"] = "check-operator";
  j["reports"] = reports;
  j["verdict"] = ok ? "PASS" : "FAIL";
  const auto path = out_path(cfg, cfg.report_file);
  write_text(path, j.dump(2) + "\n");
  out << "report written to " << path << "\n";
  return ok ? kExitOk : kExitFailed;
}

int cmd_selftest(std::ostream& out) {
  int failed = 0;
  auto line = [&](bool pass, const std::string& name, const std::string& detail) {
    out << (pass ? "PASS " : "FAIL ") << name << ": " << detail << "\n";
    if (!pass) ++failed;
  };

  {
    const double s3 = symfun::sigma_k(symfun::Spectrum({2, 3, 5, 7}), 3);
    line(s3 == 247.0, "sigma_3 of (2,3,5,7)", fmt(s3));
    const double ph = symfun::phi(symfun::Spectrum({0, 0, 1, 2}), 2);
    line(ph == 0.0, "test function vanishes at rank 2", fmt(ph));
  }
  {
    const auto f = pdesolve::AnalyticField::sphere(3);
    const auto s = estimator::analytic_level(f, -0.5, 16);
    line(std::abs(s.kappa_min - 1.0) < 1e-12, "unit sphere curvature", fmt(s.kappa_min));
  }
  const pdesolve::RingDomain2D ring{domain::ConvexCurve::circle({0, 0}, 2.0), domain::ConvexCurve::circle({0, 0}, 1.0)};
  const auto g = pdesolve::solve(operators::builtin("laplace_f", 2), ring, 1.0 / 32);
  {
    const auto p = estimator::kappa_profile(g, estimator::default_levels());
    double worst = 0.0;
    for (const auto& l : p.levels) {
      worst = l.flagged ? 1.0 : std::max(worst, std::abs(l.kappa / std::pow(2.0, l.c - 1.0) - 1.0));
    }
    line(worst <= 0.02, "annulus curvature profile at h=1/32", "max relative error " + fmt(worst));
  }
  {
    const auto r = estimator::constant_rank_scan(g, estimator::default_levels(), 0.0, 0.0);
    line(r.constant && r.rank == 1, "annulus constant rank", r.verdict() + " rank " + std::to_string(r.rank));
    const auto rig = estimator::rigidity_probe(estimator::extract_level(g, 0.5));
    line(rig.near_rigid, "annulus level is near-rigid", "deviation " + fmt(rig.radius_deviation));
  }
  {
    structcheck::CheckOptions co;
    co.samples_per_state = 40;
    const auto mc = operators::builtin("mean_curvature", 2);
    const auto st = structcheck::sample_level_states(mc, 40, 0);
    const auto l = structcheck::check_local_convexity(mc, st, co);
    const auto a = structcheck::check_augmented_convexity_necessary(mc, st, co);
    line(l.verdict == structcheck::Verdict::SatisfiedOnSamples && a.verdict == structcheck::Verdict::Fails,
         "mean curvature structural pair",
         structcheck::to_string(l.verdict) + " / " + structcheck::to_string(a.verdict));
    operators::OperatorParams neg;
    neg.f = operators::ScalarFn::constant(-1.0);
    const auto lap = operators::builtin("laplace_f", 2, neg);
    const auto v = structcheck::check_local_convexity(lap, structcheck::sample_level_states(lap, 40, 0), co);
    line(v.verdict == structcheck::Verdict::Violated, "laplace with f = -1 violates local convexity",
         structcheck::to_string(v.verdict));
  }
  out << (failed == 0 ? "selftest passed" : "selftest FAILED: " + std::to_string(failed) + " check(s)") << "\n";
  return failed == 0 ? kExitOk : kExitFailed;
}

int dispatch(const std::string& command, const std::string& config_path, const std::vector<std::string>& overrides,
             const Options& opt, std::ostream& out, std::ostream& err) {
  try {
    if (command == "selftest") return cmd_selftest(out);
    const auto cfg = load_config(config_path, overrides);
    if (command == "solve") return cmd_solve(cfg, opt, out);
    if (command == "curvature") return cmd_curvature(cfg, opt, out);
    if (command == "verify-bound") return cmd_verify_bound(cfg, opt, out);
    if (command == "scan-rank") return cmd_scan_rank(cfg, opt, out);
    if (command == "check-operator") return cmd_check_operator(cfg, opt, out);
    err << "error: unknown command '" << command << "'\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConvergenceError& e) {
    err << "solver failed: " << e.what() << "\n";
    return kExitFailed;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailed;
  }
}

}  // namespace qconv::cli
