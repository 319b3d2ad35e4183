#ifndef GRFOPT_NUMERICS_SUMMATION_HPP
#define GRFOPT_NUMERICS_SUMMATION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "grfopt/errors.hpp"

namespace grfopt {

/// Pairwise (cascade) sum in index order.
inline double pairwise_sum(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

/**
 * Arithmetic mean that does not depend on the order of its inputs.
 *
 * Values are put in a canonical order (ascending, -0 before +0) and then
 * summed pairwise, so any permutation of the same multiset gives the same
 * bits. Throws NumericalDomainError naming the first non-finite entry.
 */
inline double ordered_mean(std::span<const double> values) {
  if (values.empty()) throw InvalidArgument("mean of an empty sample");
  for (std::size_t n = 0; n < values.size(); ++n) {
    if (!std::isfinite(values[n])) {
      throw NumericalDomainError("non-finite value at sample " + std::to_string(n));
    }
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end(), [](double a, double b) {
    return a < b || (a == b && std::signbit(a) && !std::signbit(b));
  });
  return pairwise_sum(sorted) / static_cast<double>(sorted.size());
}

} // namespace grfopt

#endif // GRFOPT_NUMERICS_SUMMATION_HPP
