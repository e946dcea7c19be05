#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "opushield/model.hpp"
#include "opushield/rng.hpp"
#include "opushield/tensor.hpp"

namespace opushield::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

/// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
/// dominating the relative error.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central difference of f at every coordinate of `x` (modified in place and restored).
inline std::vector<double> central_difference(const std::function<double()>& f, std::span<double> x,
                                              double step = 1e-5) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double up = f();
    x[i] = keep - step;
    const double down = f();
    x[i] = keep;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

inline double max_rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_error(a[i], b[i], floor));
  return worst;
}

inline std::string data_dir() { return OPUSHIELD_DATA_DIR; }

}  // namespace opushield::testing
