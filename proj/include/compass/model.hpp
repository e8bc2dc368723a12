// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// The slot-complete fusion network. Per-modality encoders feed shared-space
// projections; observed slots carry real global tokens and missing slots are
// filled by directed source-to-target proxy generators, so the fusion stage
// always consumes exactly one token per modality slot.

#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "compass/autodiff.hpp"
#include "compass/modality.hpp"
#include "compass/params.hpp"
#include "compass/rng.hpp"
#include "compass/synthdata.hpp"

namespace compass {

enum class FusionMode { Sum, ConcatLinear, CrossAttention };
enum class SlotFill { Proxy, Zero };

inline std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::Sum: return "sum";
    case FusionMode::ConcatLinear: return "concat_linear";
    case FusionMode::CrossAttention: return "cross_attention";
  }
  return "?";
}

inline std::string to_string(SlotFill s) {
  return s == SlotFill::Proxy ? "proxy" : "zero";
}

struct ModelConfig {
  int n_modalities = 3;
  int tokens = 8;   // L, shared token count
  int dim = 64;     // d, shared embedding width
  int heads = 4;
  int ffn_dim = 128;
  std::vector<int> enc_tokens = {4, 4, 4};  // L_m
  std::vector<int> enc_dims = {32, 32, 32};  // d_enc per modality
  std::vector<int> enc_hidden = {64, 64, 64};
  std::vector<int> raw_dims = {32, 32, 32};
  int n_classes = 6;
  FusionMode fusion = FusionMode::Sum;
  SlotFill slot_fill = SlotFill::Proxy;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double ln_eps = 1e-5;
  // Initial gain of the generators' output normalization.
  double gen_out_gain = 0.1;

  void validate() const {
    config_check(n_modalities >= 2, "model: n_modalities must be >= 2");
    config_check(tokens >= 1 && dim >= 1, "model: tokens and dim must be positive");
    config_check(heads >= 1 && dim % heads == 0, "model: dim must be divisible by heads");
    config_check(ffn_dim >= 1, "model: ffn_dim must be positive");
    config_check(static_cast<int>(enc_tokens.size()) == n_modalities,
                 "model: enc_tokens must list one entry per modality");
    config_check(static_cast<int>(enc_dims.size()) == n_modalities,
                 "model: enc_dims must list one entry per modality");
    config_check(static_cast<int>(raw_dims.size()) == n_modalities,
                 "model: raw_dims must list one entry per modality");
    config_check(static_cast<int>(enc_hidden.size()) == n_modalities,
                 "model: enc_hidden must list one entry per modality");
    for (int v : enc_tokens) config_check(v >= 1, "model: enc_tokens entries must be positive");
    for (int v : enc_dims) config_check(v >= 1, "model: enc_dims entries must be positive");
    for (int v : enc_hidden) config_check(v >= 1, "model: enc_hidden entries must be positive");
    config_check(n_classes >= 2, "model: n_classes must be >= 2");
  }
};

enum class Provenance { Real, ProxyPair, ProxyAggregated, ZeroFill };

struct GlobalToken {
  Var vec;  // (B, d)
  Provenance prov = Provenance::Real;
  int source = -1;  // for ProxyPair: the observed source modality
  int target = -1;  // for proxies: the missing target modality
};

// ---------------------------------------------------------------------------
// Parameter initialization
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor uniform_fan_in(std::vector<int> shape, int fan_in, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

inline Tensor gaussian(std::vector<int> shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = std * rng.normal();
  return t;
}

inline std::string gen_prefix(int i, int j) {
  return cat("gen.", i, ".", j, ".");
}

}  // namespace detail

inline void init_parameters(ParameterStore& params, const ModelConfig& cfg,
                            uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "init"));
  const int d = cfg.dim;

  auto make_attention = [&](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"})
      params.create(prefix + "attn." + w, detail::uniform_fan_in({d, d}, d, rng));
    for (const char* b : {"bq", "bk", "bv", "bo"})
      params.create(prefix + "attn." + b, Tensor({d}));
  };

  for (int m = 0; m < cfg.n_modalities; ++m) {
    std::string p = cat("encoder.", m, ".");
    int raw = cfg.raw_dims[static_cast<size_t>(m)];
    int hidden = cfg.enc_hidden[static_cast<size_t>(m)];
    int out = cfg.enc_tokens[static_cast<size_t>(m)] * cfg.enc_dims[static_cast<size_t>(m)];
    params.create(p + "fc1.weight", detail::uniform_fan_in({raw, hidden}, raw, rng));
    params.create(p + "fc1.bias", Tensor({hidden}));
    params.create(p + "fc2.weight", detail::uniform_fan_in({hidden, out}, hidden, rng));
    params.create(p + "fc2.bias", Tensor({out}));
  }
  for (int m = 0; m < cfg.n_modalities; ++m) {
    std::string p = cat("proj.", m, ".");
    int de = cfg.enc_dims[static_cast<size_t>(m)];
    int lm = cfg.enc_tokens[static_cast<size_t>(m)];
    params.create(p + "pw.weight", detail::uniform_fan_in({de, d}, de, rng));
    params.create(p + "pw.bias", Tensor({d}));
    params.create(p + "bn.gamma", Tensor::full({d}, 1.0));
    params.create(p + "bn.beta", Tensor({d}));
    params.create(p + "bn.running_mean", Tensor({d}), /*trainable=*/false);
    params.create(p + "bn.running_var", Tensor::full({d}, 1.0), /*trainable=*/false);
    params.create(p + "resample.weight",
                  detail::uniform_fan_in({cfg.tokens, lm}, lm, rng));
  }
  for (int i = 0; i < cfg.n_modalities; ++i) {
    for (int j = 0; j < cfg.n_modalities; ++j) {
      if (i == j) continue;
      std::string p = detail::gen_prefix(i, j);
      params.create(p + "query", detail::gaussian({1, d}, 0.02, rng));
      make_attention(p);
      params.create(p + "norm1.gamma", Tensor::full({d}, 1.0));
      params.create(p + "norm1.beta", Tensor({d}));
      params.create(p + "ffn.w1", detail::uniform_fan_in({d, cfg.ffn_dim}, d, rng));
      params.create(p + "ffn.b1", Tensor({cfg.ffn_dim}));
      params.create(p + "ffn.w2", detail::uniform_fan_in({cfg.ffn_dim, d}, cfg.ffn_dim, rng));
      params.create(p + "ffn.b2", Tensor({d}));
      // Small output gain: fresh generators start as near-silent slot
      // fills instead of injecting noise into the fused sum, and open up
      // as alignment supervision shapes them.
      params.create(p + "norm2.gamma", Tensor::full({d}, cfg.gen_out_gain));
      params.create(p + "norm2.beta", Tensor({d}));
    }
  }
  params.create("head.norm.gamma", Tensor::full({d}, 1.0));
  params.create("head.norm.beta", Tensor({d}));
  params.create("head.linear.weight", detail::uniform_fan_in({d, cfg.n_classes}, d, rng));
  params.create("head.linear.bias", Tensor({cfg.n_classes}));
  if (cfg.fusion == FusionMode::ConcatLinear) {
    int in = cfg.n_modalities * d;
    params.create("fuse.weight", detail::uniform_fan_in({in, d}, in, rng));
    params.create("fuse.bias", Tensor({d}));
  } else if (cfg.fusion == FusionMode::CrossAttention) {
    params.create("fuse.query", detail::gaussian({1, d}, 0.02, rng));
    make_attention("fuse.");
  }
}

// Distinct (source, target) generator parameter groups present in the store.
inline int count_generator_pairs(const ParameterStore& params) {
  std::map<std::pair<int, int>, bool> pairs;
  for (const auto& [name, e] : params.entries()) {
    if (name.rfind("gen.", 0) != 0) continue;
    size_t a = name.find('.', 4);
    size_t b = name.find('.', a + 1);
    int i = std::stoi(name.substr(4, a - 4));
    int j = std::stoi(name.substr(a + 1, b - a - 1));
    pairs[{i, j}] = true;
  }
  return static_cast<int>(pairs.size());
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

inline Var linear(const Var& x, const Var& w, const Var& b) {
  return add(matmul(x, w), b);
}

inline Var ln_affine(const Var& x, const Var& gamma, const Var& beta, double eps) {
  return add(mul(layer_norm_last(x, eps), gamma), beta);
}

// Multi-head self/cross attention. q_in attends over kv_in; both are
// (B, T, d) with no positional encoding, so the output at any query row is
// invariant to permutations of the key/value rows.
inline Var multi_head_attention(const Var& q_in, const Var& kv_in,
                                ParameterStore& params, const std::string& prefix,
                                int heads) {
  int d = q_in.value().dim(2);
  int hd = d / heads;
  Var q = linear(q_in, params.get(prefix + "attn.wq"), params.get(prefix + "attn.bq"));
  Var k = linear(kv_in, params.get(prefix + "attn.wk"), params.get(prefix + "attn.bk"));
  Var v = linear(kv_in, params.get(prefix + "attn.wv"), params.get(prefix + "attn.bv"));
  std::vector<Var> ctx;
  ctx.reserve(static_cast<size_t>(heads));
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice(q, 2, h * hd, hd);
    Var kh = slice(k, 2, h * hd, hd);
    Var vh = slice(v, 2, h * hd, hd);
    Var scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Var attn = softmax_last(scores);
    ctx.push_back(matmul(attn, vh));
  }
  Var merged = concat(ctx, 2);
  return linear(merged, params.get(prefix + "attn.wo"), params.get(prefix + "attn.bo"));
}

// Single post-norm transformer encoder layer.
inline Var encoder_layer(const Var& x, ParameterStore& params,
                         const std::string& prefix, const ModelConfig& cfg) {
  Var a = multi_head_attention(x, x, params, prefix, cfg.heads);
  Var n1 = ln_affine(add(x, a), params.get(prefix + "norm1.gamma"),
                     params.get(prefix + "norm1.beta"), cfg.ln_eps);
  Var f = linear(gelu(linear(n1, params.get(prefix + "ffn.w1"), params.get(prefix + "ffn.b1"))),
                 params.get(prefix + "ffn.w2"), params.get(prefix + "ffn.b2"));
  return ln_affine(add(n1, f), params.get(prefix + "norm2.gamma"),
                   params.get(prefix + "norm2.beta"), cfg.ln_eps);
}

// ---------------------------------------------------------------------------
// Model stages
// ---------------------------------------------------------------------------

// Two-layer GELU perceptron reshaped to the (B, L_m, d_enc) token grid.
inline Var encode(const ModelConfig& cfg, ParameterStore& params, const Var& x, int m) {
  std::string p = cat("encoder.", m, ".");
  check(x.value().rank() == 2 &&
            x.value().dim(1) == cfg.raw_dims[static_cast<size_t>(m)],
        cat("encode: modality ", m, " expects raw dim ",
            cfg.raw_dims[static_cast<size_t>(m)], ", got ", shape_str(x.value())));
  Var h = gelu(linear(x, params.get(p + "fc1.weight"), params.get(p + "fc1.bias")));
  Var out = linear(h, params.get(p + "fc2.weight"), params.get(p + "fc2.bias"));
  int b = x.value().dim(0);
  return reshape(out, {b, cfg.enc_tokens[static_cast<size_t>(m)],
                       cfg.enc_dims[static_cast<size_t>(m)]});
}

// Pointwise map into the shared width, batch normalization over the
// batch x token axis, then learned resampling from L_m to L tokens.
inline Var project(const ModelConfig& cfg, ParameterStore& params, const Var& h,
                   int m, bool train_mode) {
  std::string p = cat("proj.", m, ".");
  Var pw = linear(h, params.get(p + "pw.weight"), params.get(p + "pw.bias"));
  Var normed;
  if (train_mode) {
    check(pw.value().dim(0) >= 2, "project: training batch norm needs batch size >= 2");
    auto bn = batch_norm_train(pw, cfg.bn_eps);
    normed = bn.normalized;
    Tensor& rm = params.value(p + "bn.running_mean");
    Tensor& rv = params.value(p + "bn.running_var");
    for (int64_t i = 0; i < rm.numel(); ++i) {
      rm[i] = (1.0 - cfg.bn_momentum) * rm[i] + cfg.bn_momentum * bn.batch_mean[i];
      rv[i] = (1.0 - cfg.bn_momentum) * rv[i] + cfg.bn_momentum * bn.batch_var[i];
    }
  } else {
    const Tensor& rm = params.value(p + "bn.running_mean");
    const Tensor& rv = params.value(p + "bn.running_var");
    Tensor c1({cfg.dim}), c0({cfg.dim});
    for (int i = 0; i < cfg.dim; ++i) {
      c1[i] = 1.0 / std::sqrt(rv[i] + cfg.bn_eps);
      c0[i] = -rm[i] * c1[i];
    }
    normed = add(mul(pw, Var::constant(std::move(c1), "bn_eval_scale")),
                 Var::constant(std::move(c0), "bn_eval_shift"));
  }
  Var affine = add(mul(normed, params.get(p + "bn.gamma")), params.get(p + "bn.beta"));
  return matmul(params.get(p + "resample.weight"), affine);  // (B, L, d)
}

// Mean over the L token rows.
inline GlobalToken global_token(const Var& z) {
  check(z.value().rank() == 3, "global_token: expects (B, L, d)");
  return {mean_axis(z, 1), Provenance::Real, -1, -1};
}

// Reads the generator output at the proxy-query position.
inline GlobalToken generate_proxy(const ModelConfig& cfg, ParameterStore& params,
                                  const Var& source, int i, int j) {
  check(i != j, "generate_proxy: source and target must differ");
  std::string p = detail::gen_prefix(i, j);
  int b = source.value().dim(0);
  Var q = stack_batch(params.get(p + "query"), b);  // (B, 1, d)
  Var x = concat({q, source}, 1);                   // (B, L+1, d)
  Var y = encoder_layer(x, params, p, cfg);
  Var row0 = reshape(slice(y, 1, 0, 1), {b, cfg.dim});
  return {row0, Provenance::ProxyPair, i, j};
}

// Uniform average of per-source proxies for one target slot.
inline GlobalToken aggregate_proxies(const std::vector<GlobalToken>& per_source) {
  check(!per_source.empty(), "aggregate_proxies: no sources (observed set empty)");
  int target = per_source.front().target;
  for (const auto& t : per_source) {
    check(t.prov == Provenance::ProxyPair, "aggregate_proxies: inputs must be pair proxies");
    check(t.target == target, "aggregate_proxies: mixed targets");
  }
  Var acc = per_source[0].vec;
  for (size_t s = 1; s < per_source.size(); ++s) acc = add(acc, per_source[s].vec);
  return {scale(acc, 1.0 / static_cast<double>(per_source.size())),
          Provenance::ProxyAggregated, -1, target};
}

// Slot m carries the real token if observed, otherwise the aggregated proxy
// (or a zero vector in the zero-fill ablation). Exactly N slots come out for
// every missingness pattern.
inline std::vector<GlobalToken> assemble_slots(
    const ModelConfig& cfg, const ModalitySet& observed,
    const std::map<int, GlobalToken>& real_tokens,
    const std::map<int, GlobalToken>& proxies, int batch) {
  check(!observed.empty(), "assemble_slots: observed set must be non-empty");
  check(observed.n == cfg.n_modalities, "assemble_slots: modality count mismatch");
  std::vector<GlobalToken> slots;
  slots.reserve(static_cast<size_t>(cfg.n_modalities));
  for (int m = 0; m < cfg.n_modalities; ++m) {
    if (observed.contains(m)) {
      auto it = real_tokens.find(m);
      check(it != real_tokens.end(), cat("assemble_slots: observed slot ", m, " uncovered"));
      check(proxies.find(m) == proxies.end(),
            cat("assemble_slots: slot ", m, " doubly covered"));
      check(it->second.prov == Provenance::Real,
            cat("assemble_slots: observed slot ", m, " must carry a real token"));
      slots.push_back(it->second);
    } else if (cfg.slot_fill == SlotFill::Zero) {
      check(proxies.find(m) == proxies.end(),
            cat("assemble_slots: zero-fill mode got a proxy for slot ", m));
      slots.push_back({Var::constant(Tensor({batch, cfg.dim}), "zero_fill"),
                       Provenance::ZeroFill, -1, m});
    } else {
      auto it = proxies.find(m);
      check(it != proxies.end(), cat("assemble_slots: missing slot ", m, " uncovered"));
      check(real_tokens.find(m) == real_tokens.end(),
            cat("assemble_slots: slot ", m, " doubly covered"));
      check(it->second.prov == Provenance::ProxyAggregated,
            cat("assemble_slots: missing slot ", m, " must carry an aggregated proxy"));
      slots.push_back(it->second);
    }
  }
  return slots;
}

// Fixed fusion over the N slot tokens. Sum mode has no parameters and its
// computation never depends on which slots were proxied.
inline Var fuse(const ModelConfig& cfg, ParameterStore& params,
                const std::vector<GlobalToken>& slots,
                std::vector<std::string>* trace = nullptr) {
  check(static_cast<int>(slots.size()) == cfg.n_modalities,
        cat("fuse: expected ", cfg.n_modalities, " slots, got ", slots.size()));
  if (trace)
    trace->push_back(cat("assemble:n=", cfg.n_modalities, ",d=", cfg.dim));
  switch (cfg.fusion) {
    case FusionMode::Sum: {
      Var acc = slots[0].vec;
      for (size_t s = 1; s < slots.size(); ++s) acc = add(acc, slots[s].vec);
      if (trace) trace->push_back(cat("fuse:sum:n=", cfg.n_modalities));
      return acc;
    }
    case FusionMode::ConcatLinear: {
      std::vector<Var> parts;
      for (const auto& s : slots) parts.push_back(s.vec);
      Var flat = concat(parts, 1);  // (B, N*d)
      if (trace)
        trace->push_back(cat("fuse:concat_linear:", cfg.n_modalities * cfg.dim,
                             "->", cfg.dim));
      return linear(flat, params.get("fuse.weight"), params.get("fuse.bias"));
    }
    case FusionMode::CrossAttention: {
      int b = slots[0].vec.value().dim(0);
      std::vector<Var> rows;
      for (const auto& s : slots) rows.push_back(reshape(s.vec, {b, 1, cfg.dim}));
      Var tokens = concat(rows, 1);  // (B, N, d)
      Var q = stack_batch(params.get("fuse.query"), b);
      Var out = multi_head_attention(q, tokens, params, "fuse.", cfg.heads);
      if (trace)
        trace->push_back(cat("fuse:cross_attention:n=", cfg.n_modalities,
                             ",heads=", cfg.heads));
      return reshape(out, {b, cfg.dim});
    }
  }
  fail("fuse: unknown fusion mode");
}

// LayerNorm (learned scale/shift) then an affine map to class logits. The
// same weights score fused features and individual proxy tokens.
inline Var task_head(const ModelConfig& cfg, ParameterStore& params, const Var& feature,
                     std::vector<std::string>* trace = nullptr) {
  if (trace) {
    trace->push_back(cat("head:layernorm:d=", cfg.dim));
    trace->push_back(cat("head:linear:", cfg.dim, "->", cfg.n_classes));
  }
  Var n = ln_affine(feature, params.get("head.norm.gamma"),
                    params.get("head.norm.beta"), cfg.ln_eps);
  return linear(n, params.get("head.linear.weight"), params.get("head.linear.bias"));
}

// ---------------------------------------------------------------------------
// Full forward pass
// ---------------------------------------------------------------------------

struct ForwardResult {
  Var logits;  // (B, C)
  Var fused;   // (B, d) or mode-specific width
  std::map<int, Var> z;      // projected token sequences, encoded modalities
  std::map<int, GlobalToken> real_tokens;  // z-bar per encoded modality
  std::map<std::pair<int, int>, GlobalToken> pair_proxies;
  std::map<int, GlobalToken> agg_proxies;
  std::vector<GlobalToken> slots;
  std::vector<std::string> fusion_trace;
  int generator_evals = 0;
};

// Training mode encodes every modality (masked ones still provide alignment
// targets); evaluation encodes only the observed subset.
inline ForwardResult forward_batch(const ModelConfig& cfg, ParameterStore& params,
                                   const Batch& batch, const ModalitySet& observed,
                                   bool train_mode) {
  check(!observed.empty(), "forward: observed set must be non-empty");
  check(observed.n == cfg.n_modalities, "forward: modality count mismatch");
  ForwardResult r;
  ModalitySet encode_set = train_mode ? ModalitySet::all(cfg.n_modalities) : observed;
  for (int m : encode_set.members()) {
    Var h = encode(cfg, params, Var::constant(batch.x[static_cast<size_t>(m)],
                                              cat("input.", m)), m);
    Var z = project(cfg, params, h, m, train_mode);
    r.z.emplace(m, z);
    r.real_tokens.emplace(m, global_token(z));
  }
  ModalitySet missing = observed.complement();
  if (cfg.slot_fill == SlotFill::Proxy) {
    for (int j : missing.members()) {
      std::vector<GlobalToken> per_source;
      for (int i : observed.members()) {
        GlobalToken t = generate_proxy(cfg, params, r.z.at(i), i, j);
        ++r.generator_evals;
        r.pair_proxies.emplace(std::make_pair(i, j), t);
        per_source.push_back(std::move(t));
      }
      r.agg_proxies.emplace(j, aggregate_proxies(per_source));
    }
  }
  std::map<int, GlobalToken> observed_tokens;
  for (int m : observed.members()) observed_tokens.emplace(m, r.real_tokens.at(m));
  r.slots = assemble_slots(cfg, observed, observed_tokens, r.agg_proxies, batch.size);
  r.fused = fuse(cfg, params, r.slots, &r.fusion_trace);
  r.logits = task_head(cfg, params, r.fused, &r.fusion_trace);
  return r;
}

}  // namespace compass
