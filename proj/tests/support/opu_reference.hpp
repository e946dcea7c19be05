#pragma once

#include <complex>
#include <span>
#include <vector>

#include "opushield/opu.hpp"

namespace opushield::testing {

// Independent reference: complex arithmetic in long double, straight from
// the definition m_j = |sum_k U_jk b_k|^2.
inline std::vector<double> reference_forward(const ComplexGaussianMatrix& u, std::span<const double> x) {
  std::vector<double> m(u.rows());
  for (std::size_t j = 0; j < u.rows(); ++j) {
    std::complex<long double> acc = 0;
    for (std::size_t k = 0; k < u.cols(); ++k) {
      const long double b = x[k] >= 0.0 ? 1.0L : -1.0L;
      acc += std::complex<long double>(u.real()[j * u.cols() + k], u.imag()[j * u.cols() + k]) * b;
    }
    m[j] = static_cast<double>(std::norm(acc));
  }
  return m;
}

}  // namespace opushield::testing
