#pragma once

#include <functional>
#include <vector>

#include "evmatch/autograd.hpp"

namespace evmatch {

// Central finite-difference check of reverse-mode gradients.
// Returns max_i |g_ad(i) - g_fd(i)| / max(1e-12, |g_ad(i)| + |g_fd(i)|)
// over all coordinates of all inputs.
inline double grad_check(const std::function<Var(const std::vector<Var>&)>& f,
                         std::vector<Tensor> inputs, double eps = 1e-5) {
  require(eps > 0, "grad_check: eps must be > 0");
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (auto& t : inputs) vars.push_back(Var::param(t));
  Var out = f(vars);
  require(out.value().numel() == 1, "grad_check: f must be scalar-valued");
  BackwardCtx ctx = backward(out);

  double max_rel = 0.0;
  for (size_t k = 0; k < vars.size(); ++k) {
    Tensor g_ad = ctx.grad_or_zero(vars[k]);
    for (int64_t i = 0; i < inputs[k].numel(); ++i) {
      double orig = inputs[k][i];
      auto eval_at = [&](double v) {
        std::vector<Var> probe;
        probe.reserve(inputs.size());
        for (size_t j = 0; j < inputs.size(); ++j) {
          Tensor t = inputs[j];
          if (j == k) t[i] = v;
          probe.push_back(Var::constant(std::move(t)));
        }
        return f(probe).value()[0];
      };
      double g_fd = (eval_at(orig + eps) - eval_at(orig - eps)) / (2.0 * eps);
      double denom = std::max(1e-12, std::abs(g_ad[i]) + std::abs(g_fd));
      max_rel = std::max(max_rel, std::abs(g_ad[i] - g_fd) / denom);
    }
  }
  return max_rel;
}

}  // namespace evmatch
