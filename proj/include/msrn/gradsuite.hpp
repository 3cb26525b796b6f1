#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "msrn/gradcheck.hpp"

namespace msrn {

struct GradSuiteLine {
  std::string name;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t skipped = 0;
};

struct GradSuiteResult {
  std::vector<GradSuiteLine> lines;
  double max_rel_err = 0.0;

  bool passed(double tol = 1e-4) const { return max_rel_err < tol; }
};

// Finite-difference sweep over every differentiable op (random small
// instances each), the attention/pooling/attention-head compositions,
// and the full end-to-end batch loss.
GradSuiteResult run_gradcheck_suite(int instances, double eps, uint64_t seed, std::ostream* log = nullptr);

}  // namespace msrn
