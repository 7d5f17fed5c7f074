#pragma once

#include <functional>
#include <string>
#include <vector>

#include "avsep/ops.hpp"

namespace avsep {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients of a scalar function against central
// differences, element by element over every leaf. Relative error uses a
// floor so near-zero gradients compare absolutely.
inline GradCheckResult grad_check(
    const std::function<Var(const std::vector<Var>&)>& fn,
    std::vector<Var> leaves, const std::vector<std::string>& names = {},
    double step = 1e-5) {
  for (Var& l : leaves) l.clear_grad();
  Var out = fn(leaves);
  if (out.value().size() != 1)
    throw DimensionError("grad_check expects a scalar output");
  backward(out);

  GradCheckResult res;
  NoGradGuard ng;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li];
    Tensor analytic = leaf.grad().defined()
                          ? leaf.grad()
                          : Tensor(leaf.value().axes(), leaf.value().dims());
    Tensor& v = leaf.mutable_value();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double orig = v[i];
      v[i] = orig + step;
      double fp = fn(leaves).scalar();
      v[i] = orig - step;
      double fm = fn(leaves).scalar();
      v[i] = orig;
      double num = (fp - fm) / (2.0 * step);
      double ana = analytic[i];
      double denom = std::max({std::abs(ana), std::abs(num), 1e-8});
      double rel = std::abs(ana - num) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_leaf = li < names.size() ? names[li] : std::to_string(li);
        res.worst_index = i;
        res.analytic = ana;
        res.numeric = num;
      }
    }
  }
  return res;
}

}  // namespace avsep
