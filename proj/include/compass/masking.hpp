// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "compass/modality.hpp"
#include "compass/rng.hpp"

namespace compass {

struct MaskConfig {
  double p_drop = 0.7;
  int n_modalities = 3;
  // Experimental: draw one mask per sample instead of one per mini-batch.
  bool per_sample = false;

  void validate() const {
    config_check(p_drop >= 0.0 && p_drop <= 1.0, "masking: p_drop must be in [0,1]");
    config_check(n_modalities >= 2, "masking: n_modalities must be >= 2");
  }
};

// Synthetic missingness: with probability p_drop draw the observed count k
// uniformly from {1,...,N-1} and then a uniform size-k subset; otherwise
// keep all modalities observed. Sampling k first keeps every missingness
// severity equally likely instead of favoring intermediate subset sizes.
inline ModalitySet sample_mask(const MaskConfig& cfg, Rng& rng) {
  cfg.validate();
  int n = cfg.n_modalities;
  if (rng.uniform() >= cfg.p_drop) return ModalitySet::all(n);
  int k = rng.uniform_int(1, n - 1);
  std::vector<int> perm = rng.permutation(n);
  ModalitySet o = ModalitySet::none(n);
  for (int s = 0; s < k; ++s) o.add(perm[static_cast<size_t>(s)]);
  return o;
}

}  // namespace compass
