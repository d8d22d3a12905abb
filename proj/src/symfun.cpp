#include "qconv/symfun.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qconv::symfun {

Spectrum::Spectrum(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("Spectrum: non-finite eigenvalue");
    }
  }
  std::sort(values_.begin(), values_.end());
}

double Spectrum::max_abs() const {
  double m = 0.0;
  for (double v : values_) m = std::max(m, std::abs(v));
  return m;
}

Spectrum Spectrum::shifted(double eps) const {
  std::vector<double> v(values_);
  for (double& x : v) x += eps;
  return Spectrum(std::move(v));
}

Spectrum Spectrum::without(std::size_t j) const {
  if (j >= values_.size()) {
    throw std::invalid_argument("Spectrum::without: index " + std::to_string(j) +
                                " out of range");
  }
  std::vector<double> v;
  v.reserve(values_.size() - 1);
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (i != j) v.push_back(values_[i]);
  }
  return Spectrum(std::move(v));
}

Spectrum Spectrum::subset(std::span<const std::size_t> indices) const {
  std::vector<double> v;
  v.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= values_.size()) throw std::invalid_argument("Spectrum::subset: index out of range");
    v.push_back(values_[i]);
  }
  return Spectrum(std::move(v));
}

double sigma_k(const Spectrum& s, int k) {
  if (k < 0) throw std::invalid_argument("sigma_k: negative order");
  const auto m = static_cast<int>(s.size());
  if (k == 0) return 1.0;
  if (k > m) return 0.0;
  // Coefficients of prod (1 + v_i z), truncated at degree k.
  std::vector<double> e(static_cast<std::size_t>(k) + 1, 0.0);
  e[0] = 1.0;
  int filled = 0;
  for (double v : s.values()) {
    filled = std::min(filled + 1, k);
    for (int d = filled; d >= 1; --d) e[d] += v * e[d - 1];
  }
  return e[k];
}

double sigma_k_excluding(const Spectrum& s, int k, std::size_t j) {
  return sigma_k(s.without(j), k);
}

double default_split_threshold(const Spectrum& s) {
  const double largest = s.size() == 0 ? 0.0 : s.values().back();
  return std::max(0.1 * largest, 1e-8);
}

GoodBadSplit split_good_bad(const Spectrum& s, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("split_good_bad: delta must be positive");
  GoodBadSplit out;
  out.delta = delta;
  for (std::size_t i = 0; i < s.size(); ++i) {
    (s[i] > delta ? out.good : out.bad).push_back(i);
  }
  return out;
}

GoodBadSplit split_good_bad(const Spectrum& s) {
  return split_good_bad(s, default_split_threshold(s));
}

double phi(const Spectrum& s, int l, double eps) {
  const auto m = static_cast<int>(s.size());
  if (l < 0 || l > m - 1) {
    throw std::invalid_argument("phi: rank " + std::to_string(l) + " outside [0, m-1]");
  }
  if (eps < 0.0) throw std::invalid_argument("phi: eps must be nonnegative");
  const Spectrum a = eps > 0.0 ? s.shifted(eps) : s;
  const double p = sigma_k(a, l + 1);
  const double scale = std::pow(std::max(1.0, a.max_abs()), l + 1);
  const double q = p > 1e-14 * scale ? sigma_k(a, l + 2) / p : 0.0;
  return p + q;
}

double bad_direction_coefficient(const Spectrum& good, const Spectrum& bad, std::size_t j) {
  const double s1 = sigma_k(bad, 1);
  if (!(s1 > 0.0)) throw std::invalid_argument("bad_direction_coefficient: sigma_1(B) must be positive");
  const Spectrum rest = bad.without(j);
  const double r1 = sigma_k(rest, 1);
  const double r2 = sigma_k(rest, 2);
  return sigma_k(good, static_cast<int>(good.size())) + (r1 * r1 - r2) / (s1 * s1);
}

}  // namespace qconv::symfun
