#pragma once

#include <string>
#include <vector>

#include "msrn/graph.hpp"

namespace msrn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t skipped = 0;  // coordinates too close to a kink for central differences
};

// Compares reverse-mode gradients of the scalar node `out` against central
// differences over every coordinate of the named leaves (all requires_grad
// leaves when `leaves` is empty). A coordinate is skipped when either
// perturbed evaluation passes within 10*eps of a nondifferentiable point.
// Leaf values are restored afterwards.
GradCheckResult grad_check(Graph& g, NodeId out, const std::vector<std::string>& leaves, double eps = 1e-5);

}  // namespace msrn
