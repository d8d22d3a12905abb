#pragma once

#include <cstddef>
#include <span>
#include <vector>

/// Elementary symmetric polynomials and the constant-rank test function.
///
/// The test function for a candidate rank l is
///   phi(a) = sigma_{l+1}(a) + sigma_{l+2}(a) / sigma_{l+1}(a)
/// with the quotient replaced by 0 when sigma_{l+1} vanishes. For a
/// nonnegative spectrum phi vanishes exactly when at most l values are
/// nonzero. The regularized variant evaluates phi on a + eps.
///
/// Indices passed to these functions are 0-based positions in the sorted
/// spectrum.
namespace qconv::symfun {

class Spectrum {
 public:
  Spectrum() = default;
  /// Sorts ascending. Throws std::invalid_argument on non-finite input.
  explicit Spectrum(std::vector<double> values);

  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double max_abs() const;

  Spectrum shifted(double eps) const;
  Spectrum without(std::size_t j) const;
  Spectrum subset(std::span<const std::size_t> indices) const;

 private:
  std::vector<double> values_;
};

struct GoodBadSplit {
  std::vector<std::size_t> good;
  std::vector<std::size_t> bad;
  double delta = 0.0;

  std::size_t rank() const { return good.size(); }
};

/// sigma_0 = 1, sigma_k = 0 for k > m. One pass over the values, O(m k).
double sigma_k(const Spectrum& s, int k);

/// sigma_k of the spectrum with entry j removed.
double sigma_k_excluding(const Spectrum& s, int k, std::size_t j);

/// 0.1 * largest value, floored at 1e-8.
double default_split_threshold(const Spectrum& s);

/// Good values are > delta, bad values are <= delta.
GoodBadSplit split_good_bad(const Spectrum& s, double delta);
GoodBadSplit split_good_bad(const Spectrum& s);

/// phi evaluated on values + eps. Requires 0 <= l <= m-1 and eps >= 0.
double phi(const Spectrum& s, int l, double eps = 0.0);

/// First-order coefficient of phi along a bad direction j:
///   sigma_l(G) + (sigma_1(B|j)^2 - sigma_2(B|j)) / sigma_1(B)^2.
/// `j` indexes into `bad`. Requires sigma_1(B) > 0.
double bad_direction_coefficient(const Spectrum& good, const Spectrum& bad,
                                 std::size_t j);

}  // namespace qconv::symfun
