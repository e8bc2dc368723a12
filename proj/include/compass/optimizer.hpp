// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "compass/params.hpp"

namespace compass {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Optional per-parameter learning-rate multiplier, keyed by name.
  std::function<double(const std::string&)> lr_mult;
};

// One AdamW update with bias correction followed by decoupled weight decay.
// Consumes and zeroes gradients; buffers (non-trainable entries) are left
// untouched.
inline void adamw_step(ParameterStore& params, const AdamWConfig& cfg) {
  for (auto& [name, e] : params.entries()) {
    if (!e.trainable) continue;
    check(e.var.grad_ready(), cat("missing gradient for parameter '", name, "'"));
    Tensor& p = e.var.value();
    Tensor& g = e.var.node()->grad;
    check(g.same_shape(p), cat("gradient shape mismatch for '", name, "'"));
    for (int64_t i = 0; i < g.numel(); ++i)
      check(std::isfinite(g[i]), cat("non-finite gradient for parameter '", name, "'"));
    e.step += 1;
    double lr = cfg.lr * (cfg.lr_mult ? cfg.lr_mult(name) : 1.0);
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(e.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(e.step));
    for (int64_t i = 0; i < p.numel(); ++i) {
      e.m[i] = cfg.beta1 * e.m[i] + (1.0 - cfg.beta1) * g[i];
      e.v[i] = cfg.beta2 * e.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      double mhat = e.m[i] / bc1;
      double vhat = e.v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      p[i] -= lr * cfg.weight_decay * p[i];
    }
    g.fill(0.0);
  }
}

struct ScheduleConfig {
  double base_lr = 1e-3;
  int warmup_epochs = 2;
  int total_epochs = 20;
  double power = 0.9;
};

// Linear warmup to base_lr, then polynomial decay to zero at total_epochs.
inline double lr_at(const ScheduleConfig& cfg, int epoch) {
  check(cfg.base_lr > 0 && cfg.total_epochs > 0 && cfg.power > 0,
        "schedule: base_lr, total_epochs and power must be positive");
  check(cfg.warmup_epochs >= 0 && cfg.warmup_epochs < cfg.total_epochs,
        "schedule: warmup_epochs must be in [0, total_epochs)");
  check(epoch >= 0 && epoch < cfg.total_epochs,
        cat("schedule: epoch ", epoch, " out of range [0,", cfg.total_epochs, ")"));
  if (epoch < cfg.warmup_epochs)
    return cfg.base_lr * static_cast<double>(epoch + 1) /
           static_cast<double>(cfg.warmup_epochs);
  double frac = static_cast<double>(epoch - cfg.warmup_epochs) /
                static_cast<double>(cfg.total_epochs - cfg.warmup_epochs);
  return cfg.base_lr * std::pow(1.0 - frac, cfg.power);
}

}  // namespace compass
