#pragma once

// Test-only backdoor into OpuLayer. Lives under tests/ and is never installed
// or linked into the library or the command-line tool.

#include <memory>
#include <utility>

#include "opushield/opu.hpp"

namespace opushield {

struct OpuTestAccess {
  static OpuLayer with_matrix(OpuConfig config, ComplexGaussianMatrix matrix) {
    return OpuLayer(config, std::make_shared<const ComplexGaussianMatrix>(std::move(matrix)));
  }

  static const ComplexGaussianMatrix& matrix(const OpuLayer& layer) { return *layer.matrix_; }
};

}  // namespace opushield
