#include "msrn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msrn {

GradCheckResult grad_check(Graph& g, NodeId out, const std::vector<std::string>& leaves, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
  if (g.value(out).numel() != 1) throw std::invalid_argument("grad_check: output must be scalar");

  std::vector<std::string> names = leaves.empty() ? g.grad_leaf_names() : leaves;
  for (const std::string& name : names) {
    if (!g.node(g.leaf_id(name)).requires_grad)
      throw std::invalid_argument("grad_check: leaf '" + name + "' does not require grad");
  }

  g.forward({}, out);
  GradMap analytic = g.backward(out, Tensor::full(g.value(out).shape(), 1.0));

  GradCheckResult result;
  for (const std::string& name : names) {
    Tensor base = g.value(g.leaf_id(name));
    const Tensor& da = analytic.at(name);
    for (int64_t i = 0; i < base.numel(); ++i) {
      Tensor probe = base;
      probe[i] = base[i] + eps;
      double f_plus = g.forward({{name, probe}}, out).item();
      double margin = g.kink_margin();
      probe[i] = base[i] - eps;
      double f_minus = g.forward({{name, probe}}, out).item();
      margin = std::min(margin, g.kink_margin());
      if (margin < 10.0 * eps) {
        ++result.skipped;
        continue;
      }
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      double a = da[i];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      result.max_rel_err = std::max(result.max_rel_err, rel);
      ++result.checked;
    }
    g.forward({{name, base}}, out);
  }
  return result;
}

}  // namespace msrn
