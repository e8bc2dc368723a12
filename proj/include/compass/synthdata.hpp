// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reproducible synthetic N-modality classification data. Each class owns a
// latent anchor; samples jitter around it and every modality observes the
// latent through a fixed random projection plus norm-scaled noise, so
// per-modality informativeness is controlled by a single snr knob.

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "compass/rng.hpp"
#include "compass/tensor.hpp"

namespace compass {

struct DatasetSpec {
  int n_modalities = 3;
  int n_classes = 6;
  int latent_dim = 16;
  std::vector<int> raw_dims = {32, 32, 32};
  std::vector<double> snrs = {1.5, 1.5, 1.5};
  int train_per_class = 40;
  int val_per_class = 10;
  int test_per_class = 20;
  uint64_t seed = 1;

  void validate() const {
    config_check(n_modalities >= 2, "dataset: n_modalities must be >= 2");
    config_check(n_classes >= 2, "dataset: n_classes must be >= 2");
    config_check(latent_dim >= 1, "dataset: latent_dim must be positive");
    config_check(static_cast<int>(raw_dims.size()) == n_modalities,
                 "dataset: raw_dims must list one entry per modality");
    config_check(static_cast<int>(snrs.size()) == n_modalities,
                 "dataset: snrs must list one entry per modality");
    for (int d : raw_dims) config_check(d >= 1, "dataset: raw dims must be positive");
    for (double s : snrs) config_check(s > 0, "dataset: snr must be positive");
    config_check(train_per_class >= 1 && val_per_class >= 1 && test_per_class >= 1,
                 "dataset: samples per class must be positive");
  }
};

struct Sample {
  std::vector<std::vector<double>> x;  // one raw vector per modality
  int label = 0;
};

struct Dataset {
  DatasetSpec spec;
  std::vector<Sample> train, val, test;
};

namespace detail {

inline std::vector<Sample> generate_split(const DatasetSpec& spec,
                                          const std::vector<std::vector<double>>& anchors,
                                          const std::vector<std::vector<double>>& proj,
                                          int per_class, uint64_t split_tag) {
  Rng rng(derive_seed(spec.seed, "split", split_tag));
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(per_class) * spec.n_classes);
  std::vector<double> u(static_cast<size_t>(spec.latent_dim));
  for (int c = 0; c < spec.n_classes; ++c) {
    for (int s = 0; s < per_class; ++s) {
      for (int k = 0; k < spec.latent_dim; ++k)
        u[static_cast<size_t>(k)] =
            anchors[static_cast<size_t>(c)][static_cast<size_t>(k)] + 0.3 * rng.normal();
      Sample smp;
      smp.label = c;
      smp.x.resize(static_cast<size_t>(spec.n_modalities));
      for (int m = 0; m < spec.n_modalities; ++m) {
        int rd = spec.raw_dims[static_cast<size_t>(m)];
        const auto& A = proj[static_cast<size_t>(m)];  // rd x latent, row-major
        std::vector<double>& xm = smp.x[static_cast<size_t>(m)];
        xm.resize(static_cast<size_t>(rd));
        double norm2 = 0.0;
        for (int i = 0; i < rd; ++i) {
          double v = 0.0;
          for (int k = 0; k < spec.latent_dim; ++k)
            v += A[static_cast<size_t>(i) * spec.latent_dim + k] * u[static_cast<size_t>(k)];
          xm[static_cast<size_t>(i)] = v;
          norm2 += v * v;
        }
        double noise_scale = std::sqrt(norm2) /
                             (spec.snrs[static_cast<size_t>(m)] * std::sqrt(static_cast<double>(rd)));
        for (int i = 0; i < rd; ++i)
          xm[static_cast<size_t>(i)] += noise_scale * rng.normal();
      }
      out.push_back(std::move(smp));
    }
  }
  return out;
}

}  // namespace detail

inline Dataset generate(const DatasetSpec& spec) {
  spec.validate();
  Rng anchor_rng(derive_seed(spec.seed, "anchors"));
  std::vector<std::vector<double>> anchors(static_cast<size_t>(spec.n_classes));
  for (auto& a : anchors) {
    a.resize(static_cast<size_t>(spec.latent_dim));
    for (auto& v : a) v = anchor_rng.normal();
  }
  std::vector<std::vector<double>> proj(static_cast<size_t>(spec.n_modalities));
  for (int m = 0; m < spec.n_modalities; ++m) {
    Rng proj_rng(derive_seed(spec.seed, "proj", static_cast<uint64_t>(m)));
    auto& A = proj[static_cast<size_t>(m)];
    A.resize(static_cast<size_t>(spec.raw_dims[static_cast<size_t>(m)]) * spec.latent_dim);
    for (auto& v : A) v = proj_rng.normal();
  }
  Dataset ds;
  ds.spec = spec;
  ds.train = detail::generate_split(spec, anchors, proj, spec.train_per_class, 0);
  ds.val = detail::generate_split(spec, anchors, proj, spec.val_per_class, 1);
  ds.test = detail::generate_split(spec, anchors, proj, spec.test_per_class, 2);
  return ds;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

struct Batch {
  std::vector<Tensor> x;  // per modality, (B, raw_dim_m)
  std::vector<int> labels;
  int size = 0;
};

inline Batch make_batch(const std::vector<Sample>& samples,
                        const std::vector<int>& indices) {
  check(!indices.empty(), "make_batch: empty index list");
  Batch b;
  b.size = static_cast<int>(indices.size());
  int n_mod = static_cast<int>(samples[static_cast<size_t>(indices[0])].x.size());
  b.x.reserve(static_cast<size_t>(n_mod));
  for (int m = 0; m < n_mod; ++m) {
    int rd = static_cast<int>(samples[static_cast<size_t>(indices[0])].x[static_cast<size_t>(m)].size());
    Tensor t({b.size, rd});
    for (int r = 0; r < b.size; ++r) {
      const auto& xm = samples[static_cast<size_t>(indices[static_cast<size_t>(r)])].x[static_cast<size_t>(m)];
      for (int i = 0; i < rd; ++i) t.at(r, i) = xm[static_cast<size_t>(i)];
    }
    b.x.push_back(std::move(t));
  }
  b.labels.reserve(indices.size());
  for (int idx : indices)
    b.labels.push_back(samples[static_cast<size_t>(idx)].label);
  return b;
}

// ---------------------------------------------------------------------------
// On-disk split cache: u32 N, u32 C, u32 sample count, u32 raw dim per
// modality, then per sample the concatenated raw vectors as f32 rows and the
// label as u16.
// ---------------------------------------------------------------------------

inline void write_split_cache(const std::string& path, const DatasetSpec& spec,
                              const std::vector<Sample>& samples) {
  std::ofstream os(path, std::ios::binary);
  check(static_cast<bool>(os), cat("cannot open data cache for writing: ", path));
  auto w32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  w32(static_cast<uint32_t>(spec.n_modalities));
  w32(static_cast<uint32_t>(spec.n_classes));
  w32(static_cast<uint32_t>(samples.size()));
  for (int d : spec.raw_dims) w32(static_cast<uint32_t>(d));
  for (const Sample& s : samples) {
    for (const auto& xm : s.x) {
      std::vector<float> row(xm.begin(), xm.end());
      os.write(reinterpret_cast<const char*>(row.data()),
               static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    uint16_t lbl = static_cast<uint16_t>(s.label);
    os.write(reinterpret_cast<const char*>(&lbl), 2);
  }
  check(static_cast<bool>(os), cat("data cache write failed: ", path));
}

inline std::vector<Sample> read_split_cache(const std::string& path,
                                            const DatasetSpec& spec) {
  std::ifstream is(path, std::ios::binary);
  check(static_cast<bool>(is), cat("cannot open data cache: ", path));
  auto r32 = [&]() {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    check(static_cast<bool>(is), cat("data cache truncated: ", path));
    return v;
  };
  check(r32() == static_cast<uint32_t>(spec.n_modalities),
        "data cache: modality count mismatch");
  check(r32() == static_cast<uint32_t>(spec.n_classes),
        "data cache: class count mismatch");
  uint32_t count = r32();
  for (int m = 0; m < spec.n_modalities; ++m)
    check(r32() == static_cast<uint32_t>(spec.raw_dims[static_cast<size_t>(m)]),
          cat("data cache: raw dim mismatch for modality ", m));
  std::vector<Sample> out(count);
  for (auto& s : out) {
    s.x.resize(static_cast<size_t>(spec.n_modalities));
    for (int m = 0; m < spec.n_modalities; ++m) {
      int rd = spec.raw_dims[static_cast<size_t>(m)];
      std::vector<float> row(static_cast<size_t>(rd));
      is.read(reinterpret_cast<char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
      s.x[static_cast<size_t>(m)].assign(row.begin(), row.end());
    }
    uint16_t lbl = 0;
    is.read(reinterpret_cast<char*>(&lbl), 2);
    check(static_cast<bool>(is), cat("data cache truncated: ", path));
    s.label = lbl;
  }
  return out;
}

}  // namespace compass
