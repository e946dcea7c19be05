#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace opushield {

/// [x0 - eps, x0 + eps] intersected with [lo, hi], tightened by an ulp where
/// needed so that |v - x0| <= eps also holds when evaluated in floating point.
inline std::pair<double, double> linf_interval(double x0, double eps, double lo, double hi) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  double a = std::max(x0 - eps, lo);
  double b = std::min(x0 + eps, hi);
  while (x0 - a > eps) a = std::nextafter(a, inf);
  while (b - x0 > eps) b = std::nextafter(b, -inf);
  return {a, b};
}

inline bool within_ball(double v, double x0, double eps) { return std::abs(v - x0) <= eps; }

}  // namespace opushield
