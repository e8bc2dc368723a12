// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives: smoothed cross-entropy on the fused prediction,
// proxy-to-target alignment, VICReg shared-space regularization over
// observed modality pairs, per-proxy discriminative supervision, and their
// weighted total with masked-batch gating.

#pragma once

#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "compass/autodiff.hpp"
#include "compass/modality.hpp"
#include "compass/model.hpp"

namespace compass {

struct LossWeights {
  double lambda_align = 0.2;
  double lambda_ss = 0.3;
  double lambda_proxy = 0.5;
  double mu_inv = 5.0;
  double mu_var = 25.0;
  double mu_cov = 1.0;
  double label_smoothing = 0.1;

  void validate() const {
    config_check(lambda_align >= 0 && lambda_ss >= 0 && lambda_proxy >= 0,
                 "losses: lambda weights must be nonnegative");
    config_check(mu_inv >= 0 && mu_var >= 0 && mu_cov >= 0,
                 "losses: mu weights must be nonnegative");
    config_check(label_smoothing >= 0 && label_smoothing < 1,
                 "losses: label_smoothing must be in [0,1)");
  }
};

// Cross-entropy with label smoothing, averaged over the batch.
inline Var task_loss(const Var& logits, const std::vector<int>& labels, double eps) {
  Var l = logits.value().rank() == 1
              ? reshape(logits, {1, logits.value().dim(0)})
              : logits;
  check(l.value().rank() == 2, "task_loss: logits must be (B, C) or (C)");
  int b = l.value().dim(0);
  int c = l.value().dim(1);
  check(static_cast<int>(labels.size()) == b, "task_loss: label count mismatch");
  Tensor q({b, c});
  for (int r = 0; r < b; ++r) {
    int y = labels[static_cast<size_t>(r)];
    check(y >= 0 && y < c, cat("task_loss: label ", y, " out of range [0,", c, ")"));
    for (int k = 0; k < c; ++k)
      q.at(r, k) = eps / static_cast<double>(c) + (k == y ? 1.0 - eps : 0.0);
  }
  Var lp = log_softmax_last(l);
  return scale(sum_all(mul(Var::constant(std::move(q), "smoothed_target"), lp)),
               -1.0 / static_cast<double>(b));
}

// Mean squared error between each pair proxy and the real token of its
// target, averaged over the K = |O|*|M| pairs (and over the batch). The
// real token enters as a detached supervision target: the loss pulls
// proxies toward targets, never targets toward proxies.
inline Var align_loss(const std::map<std::pair<int, int>, GlobalToken>& pair_proxies,
                      const std::map<int, GlobalToken>& real_targets) {
  check(!pair_proxies.empty(), "align_loss: no source-target pairs (nothing masked)");
  int b = pair_proxies.begin()->second.vec.value().dim(0);
  Var acc;
  for (const auto& [key, proxy] : pair_proxies) {
    auto it = real_targets.find(key.second);
    check(it != real_targets.end(),
          cat("align_loss: no real target for modality ", key.second));
    Var term = sum_all(square(sub(proxy.vec, detach(it->second.vec))));
    acc = acc.defined() ? add(acc, term) : term;
  }
  double k = static_cast<double>(pair_proxies.size());
  return scale(acc, 1.0 / (k * static_cast<double>(b)));
}

struct VicregResult {
  Var total;
  Var invariance;
  Var variance;
  Var covariance;
};

namespace detail {

// Per-matrix variance hinge and covariance penalty on (B, d) tokens.
// Unbiased statistics (1/(B-1)); std uses a 1e-4 floor inside the sqrt.
struct VicregSingle {
  Var var_term;
  Var cov_term;
};

inline VicregSingle vicreg_single(const Var& z) {
  int b = z.value().dim(0);
  int d = z.value().dim(1);
  double unbias = 1.0 / static_cast<double>(b - 1);
  Var centered = sub(z, mean_axis(z, 0));
  Var var = scale(sum_axis(square(centered), 0), unbias);
  Var std = vsqrt(add_scalar(var, 1e-4));
  Var hinge = max_const(add_scalar(neg(std), 1.0), 0.0);
  Var var_term = mean_all(hinge);
  Var cov = scale(matmul(transpose(centered), centered), unbias);
  Tensor offdiag = Tensor::full({d, d}, 1.0);
  for (int i = 0; i < d; ++i) offdiag.at(i, i) = 0.0;
  Var cov_term = scale(sum_all(mul(square(cov), Var::constant(std::move(offdiag), "offdiag"))),
                       1.0 / static_cast<double>(d));
  return {var_term, cov_term};
}

}  // namespace detail

// VICReg on one modality pair of batched global tokens.
inline VicregResult vicreg_pair(const Var& z_i, const Var& z_j, const LossWeights& w) {
  check(z_i.value().rank() == 2 && z_j.value().rank() == 2 &&
            z_i.value().same_shape(z_j.value()),
        "vicreg_pair: inputs must be (B, d) with matching shapes");
  int b = z_i.value().dim(0);
  check(b >= 2, "vicreg_pair: batch size must be >= 2");
  Var inv = scale(sum_all(square(sub(z_i, z_j))), 1.0 / static_cast<double>(b));
  auto si = detail::vicreg_single(z_i);
  auto sj = detail::vicreg_single(z_j);
  Var variance = scale(add(si.var_term, sj.var_term), 0.5);
  Var covariance = scale(add(si.cov_term, sj.cov_term), 0.5);
  Var total = add(add(scale(inv, w.mu_inv), scale(variance, w.mu_var)),
                  scale(covariance, w.mu_cov));
  return {total, inv, variance, covariance};
}

// Mean of vicreg_pair over all unordered observed pairs; zero when fewer
// than two modalities are observed (no pairs exist).
inline Var shared_space_loss(const std::map<int, GlobalToken>& tokens,
                             const ModalitySet& observed, const LossWeights& w) {
  std::vector<int> mods = observed.members();
  for (int m : mods)
    check(tokens.count(m), cat("shared_space_loss: no tokens for modality ", m));
  if (mods.size() < 2) return Var::constant(0.0, "ss_zero");
  Var acc;
  int pairs = 0;
  for (size_t a = 0; a < mods.size(); ++a) {
    for (size_t c = a + 1; c < mods.size(); ++c) {
      Var v = vicreg_pair(tokens.at(mods[a]).vec, tokens.at(mods[c]).vec, w).total;
      acc = acc.defined() ? add(acc, v) : v;
      ++pairs;
    }
  }
  return scale(acc, 1.0 / static_cast<double>(pairs));
}

// Smoothed cross-entropy of the shared task head applied to every pair
// proxy, averaged over the K pairs.
inline Var per_proxy_loss(const ModelConfig& cfg, ParameterStore& params,
                          const std::map<std::pair<int, int>, GlobalToken>& pair_proxies,
                          const std::vector<int>& labels, double eps) {
  check(!pair_proxies.empty(), "per_proxy_loss: no source-target pairs (nothing masked)");
  Var acc;
  for (const auto& [key, proxy] : pair_proxies) {
    Var l = task_loss(task_head(cfg, params, proxy.vec), labels, eps);
    acc = acc.defined() ? add(acc, l) : l;
  }
  return scale(acc, 1.0 / static_cast<double>(pair_proxies.size()));
}

// Weighted total. In unmasked batches the align and proxy terms are exactly
// zero and only the task and shared-space terms remain.
inline Var total_loss(const Var& task, const std::optional<Var>& align,
                      const std::optional<Var>& ss, const std::optional<Var>& proxy,
                      const LossWeights& w, bool masked) {
  w.validate();
  Var total = task;
  if (masked && align.has_value())
    total = add(total, scale(*align, w.lambda_align));
  if (ss.has_value()) total = add(total, scale(*ss, w.lambda_ss));
  if (masked && proxy.has_value())
    total = add(total, scale(*proxy, w.lambda_proxy));
  return total;
}

}  // namespace compass
