// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference gradient verification. The numeric side only
// ever re-evaluates forward values, so it stays independent of the
// reverse-mode path it checks.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "compass/autodiff.hpp"
#include "compass/params.hpp"
#include "compass/rng.hpp"

namespace compass {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "param[i]"
  int64_t components = 0;
  bool pass(double tol) const { return components > 0 && max_rel_err < tol; }
};

// Compares reverse-mode gradients of the scalar build() against central
// finite differences for every trainable parameter in the store. build()
// must be a deterministic function of the current parameter values.
inline GradCheckReport check_gradients(ParameterStore& params,
                                       const std::function<Var()>& build,
                                       double h = 1e-6) {
  params.zero_grads();
  Var root = build();
  check(root.value().numel() == 1, "gradcheck: loss must be scalar");
  forward_backward(root);

  std::map<std::string, Tensor> analytic;
  for (auto& [name, e] : params.entries())
    if (e.trainable) analytic.emplace(name, e.var.node()->grad);

  GradCheckReport rep;
  for (auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    Tensor& p = e.var.value();
    const Tensor& a = analytic.at(name);
    for (int64_t i = 0; i < p.numel(); ++i) {
      double orig = p[i];
      p[i] = orig + h;
      double fp = build().value()[0];
      p[i] = orig - h;
      double fm = build().value()[0];
      p[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double denom = std::max({1.0, std::abs(a[i]), std::abs(numeric)});
      double rel = std::abs(a[i] - numeric) / denom;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst = cat(name, "[", i, "]");
      }
      ++rep.components;
    }
  }
  return rep;
}

// A named gradcheck fixture: a private store plus a loss builder over it.
struct GradCheckCase {
  std::string name;
  std::shared_ptr<ParameterStore> store;
  std::function<Var()> build;
};

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace compass
