// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: encode and pool every modality, sample a synthetic
// missingness mask, build proxies for masked slots, assemble the fixed-slot
// fusion input, combine the four objectives, and take an AdamW step under a
// warmup-polynomial schedule. Validation accuracy on the full modality set
// selects the checkpoint that is kept.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "compass/checkpoint.hpp"
#include "compass/losses.hpp"
#include "compass/masking.hpp"
#include "compass/model.hpp"
#include "compass/optimizer.hpp"
#include "compass/synthdata.hpp"

namespace compass {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 16;
  double base_lr = 2e-3;
  double weight_decay = 5e-4;
  int warmup_epochs = 2;
  double power = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 1;
  int eval_every = 1;
  int eval_batch = 64;
  // Per-group learning-rate multipliers, matched by parameter name prefix.
  std::vector<std::pair<std::string, double>> lr_mults;
  std::string out_dir;  // empty: keep checkpoints and log in memory only

  void validate() const {
    config_check(epochs >= 1, "training: epochs must be positive");
    config_check(batch_size >= 2, "training: batch_size must be >= 2");
    config_check(base_lr > 0, "training: base_lr must be positive");
    config_check(weight_decay >= 0, "training: weight_decay must be nonnegative");
    config_check(warmup_epochs >= 0 && warmup_epochs < epochs,
                 "training: warmup_epochs must be in [0, epochs)");
    config_check(power > 0, "training: power must be positive");
    config_check(eval_every >= 1, "training: eval_every must be positive");
    config_check(eval_batch >= 1, "training: eval_batch must be positive");
  }

  ScheduleConfig schedule() const {
    return {base_lr, warmup_epochs, epochs, power};
  }
};

struct TrainLogRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0;
  double task = 0;
  double align = 0;
  double ss = 0;
  double proxy = 0;
  double total = 0;
  uint32_t observed_bits = 0;
};

inline std::string format_record(const TrainLogRecord& r) {
  return cat("epoch=", r.epoch, " step=", r.step, " lr=", r.lr, " task=", r.task,
             " align=", r.align, " ss=", r.ss, " proxy=", r.proxy,
             " total=", r.total, " observed=", r.observed_bits);
}

struct BatchLoss {
  Var total;
  double task_val = 0;
  double align_val = 0;
  double ss_val = 0;
  double proxy_val = 0;
  double total_val = 0;
  bool masked = false;
  int generator_evals = 0;
  std::optional<ForwardResult> forward;
};

// Loss assembly for one training batch under a single observed set.
// Align and proxy terms exist only when something is masked and proxies are
// in play; the shared-space term always runs over observed real tokens.
inline BatchLoss compute_batch_loss(const ModelConfig& cfg, ParameterStore& params,
                                    const Batch& batch, const ModalitySet& observed,
                                    const LossWeights& weights) {
  BatchLoss out;
  ForwardResult fr = forward_batch(cfg, params, batch, observed, /*train_mode=*/true);
  out.generator_evals = fr.generator_evals;
  out.masked = !observed.is_full();

  Var task = task_loss(fr.logits, batch.labels, weights.label_smoothing);
  Var ss = shared_space_loss(fr.real_tokens, observed, weights);
  std::optional<Var> align, proxy;
  if (out.masked && !fr.pair_proxies.empty()) {
    align = align_loss(fr.pair_proxies, fr.real_tokens);
    proxy = per_proxy_loss(cfg, params, fr.pair_proxies, batch.labels,
                           weights.label_smoothing);
  }
  out.total = total_loss(task, align, ss, proxy, weights, out.masked);
  out.task_val = task.value()[0];
  out.ss_val = ss.value()[0];
  out.align_val = align ? align->value()[0] : 0.0;
  out.proxy_val = proxy ? proxy->value()[0] : 0.0;
  out.total_val = out.total.value()[0];
  out.forward = std::move(fr);
  return out;
}

namespace detail {

inline Var gather_rows(const Var& x, const std::vector<int>& rows) {
  if (static_cast<int>(rows.size()) == x.value().dim(0)) {
    bool identity = true;
    for (size_t i = 0; i < rows.size(); ++i)
      if (rows[i] != static_cast<int>(i)) identity = false;
    if (identity) return x;
  }
  std::vector<Var> parts;
  parts.reserve(rows.size());
  for (int r : rows) parts.push_back(slice(x, 0, r, 1));
  return concat(parts, 0);
}

}  // namespace detail

// Experimental per-sample masking: one mask per sample, processed as
// sub-batches grouped by identical mask. Groups too small for batch
// statistics contribute zero to the shared-space term.
inline BatchLoss compute_batch_loss_per_sample(const ModelConfig& cfg,
                                               ParameterStore& params,
                                               const Batch& batch,
                                               const std::vector<ModalitySet>& masks,
                                               const LossWeights& weights) {
  check(static_cast<int>(masks.size()) == batch.size,
        "per-sample loss: one mask per sample required");
  BatchLoss out;
  // Shared encode/project/pool over the full batch (masking never hides
  // training inputs, only the fusion path).
  std::map<int, Var> z;
  std::map<int, GlobalToken> zbar;
  for (int m = 0; m < cfg.n_modalities; ++m) {
    Var h = encode(cfg, params, Var::constant(batch.x[static_cast<size_t>(m)],
                                              cat("input.", m)), m);
    Var zm = project(cfg, params, h, m, /*train_mode=*/true);
    z.emplace(m, zm);
    zbar.emplace(m, global_token(zm));
  }
  std::map<uint32_t, std::vector<int>> groups;
  for (int r = 0; r < batch.size; ++r)
    groups[masks[static_cast<size_t>(r)].bits].push_back(r);

  double inv_b = 1.0 / static_cast<double>(batch.size);
  int masked_rows = 0;
  for (const auto& [bits, rows] : groups)
    if (bits != ModalitySet::all(cfg.n_modalities).bits)
      masked_rows += static_cast<int>(rows.size());

  Var task_acc, ss_acc, align_acc, proxy_acc;
  auto add_to = [](Var& acc, const Var& v) { acc = acc.defined() ? add(acc, v) : v; };
  for (const auto& [bits, rows] : groups) {
    ModalitySet o = ModalitySet::from_bits(bits, cfg.n_modalities);
    double wgt = static_cast<double>(rows.size()) * inv_b;
    std::vector<int> labels;
    for (int r : rows) labels.push_back(batch.labels[static_cast<size_t>(r)]);
    std::map<int, Var> gz;
    std::map<int, GlobalToken> gzbar;
    for (int m = 0; m < cfg.n_modalities; ++m) {
      gz.emplace(m, detail::gather_rows(z.at(m), rows));
      gzbar.emplace(m, GlobalToken{detail::gather_rows(zbar.at(m).vec, rows),
                                   Provenance::Real, -1, -1});
    }
    std::map<std::pair<int, int>, GlobalToken> pair_proxies;
    std::map<int, GlobalToken> agg;
    if (cfg.slot_fill == SlotFill::Proxy) {
      for (int j : o.complement().members()) {
        std::vector<GlobalToken> per_source;
        for (int i : o.members()) {
          GlobalToken t = generate_proxy(cfg, params, gz.at(i), i, j);
          ++out.generator_evals;
          pair_proxies.emplace(std::make_pair(i, j), t);
          per_source.push_back(std::move(t));
        }
        agg.emplace(j, aggregate_proxies(per_source));
      }
    }
    std::map<int, GlobalToken> observed_tokens;
    for (int m : o.members()) observed_tokens.emplace(m, gzbar.at(m));
    auto slots = assemble_slots(cfg, o, observed_tokens, agg,
                                static_cast<int>(rows.size()));
    Var logits = task_head(cfg, params, fuse(cfg, params, slots));
    add_to(task_acc, scale(task_loss(logits, labels, weights.label_smoothing), wgt));
    if (o.count() >= 2 && rows.size() >= 2)
      add_to(ss_acc, scale(shared_space_loss(gzbar, o, weights), wgt));
    if (!o.is_full() && !pair_proxies.empty() && masked_rows > 0) {
      double mw = static_cast<double>(rows.size()) / static_cast<double>(masked_rows);
      add_to(align_acc, scale(align_loss(pair_proxies, gzbar), mw));
      add_to(proxy_acc, scale(per_proxy_loss(cfg, params, pair_proxies, labels,
                                             weights.label_smoothing), mw));
    }
  }
  out.masked = masked_rows > 0;
  Var task = task_acc.defined() ? task_acc : Var::constant(0.0);
  std::optional<Var> ss = ss_acc.defined() ? std::optional<Var>(ss_acc)
                                           : std::optional<Var>(Var::constant(0.0));
  std::optional<Var> align =
      align_acc.defined() ? std::optional<Var>(align_acc) : std::nullopt;
  std::optional<Var> proxy =
      proxy_acc.defined() ? std::optional<Var>(proxy_acc) : std::nullopt;
  out.total = total_loss(task, align, ss, proxy, weights, out.masked);
  out.task_val = task.value()[0];
  out.ss_val = ss ? ss->value()[0] : 0.0;
  out.align_val = align ? align->value()[0] : 0.0;
  out.proxy_val = proxy ? proxy->value()[0] : 0.0;
  out.total_val = out.total.value()[0];
  return out;
}

// Top-1 accuracy of the inference path (eval-mode statistics, proxies only
// for truly missing modalities, no auxiliary losses).
inline double evaluate_split(const ModelConfig& cfg, ParameterStore& params,
                             const std::vector<Sample>& samples,
                             const ModalitySet& observed, int eval_batch = 64) {
  check(!samples.empty(), "evaluate_split: empty split");
  check(!observed.empty(), "evaluate_split: observed set must be non-empty");
  int n = static_cast<int>(samples.size());
  int correct = 0;
  for (int start = 0; start < n; start += eval_batch) {
    int len = std::min(eval_batch, n - start);
    std::vector<int> idx(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) idx[static_cast<size_t>(i)] = start + i;
    Batch b = make_batch(samples, idx);
    ForwardResult fr = forward_batch(cfg, params, b, observed, /*train_mode=*/false);
    const Tensor& logits = fr.logits.value();
    for (int r = 0; r < len; ++r) {
      int best = 0;
      for (int k = 1; k < cfg.n_classes; ++k)
        if (logits.at(r, k) > logits.at(r, best)) best = k;
      if (best == b.labels[static_cast<size_t>(r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

struct TrainResult {
  double best_val_acc = -1.0;
  int best_epoch = -1;
  std::vector<TrainLogRecord> log;
  std::vector<double> val_history;        // per evaluated epoch
  std::vector<double> best_history;       // running best after each eval
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
};

inline void write_train_log(const std::vector<TrainLogRecord>& log,
                            const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), cat("cannot open training log for writing: ", path));
  os << "epoch,step,lr,task,align,ss,proxy,total,observed_bits\n";
  os.precision(17);
  for (const auto& r : log)
    os << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.task << ','
       << r.align << ',' << r.ss << ',' << r.proxy << ',' << r.total << ','
       << r.observed_bits << '\n';
  check(static_cast<bool>(os), cat("training log write failed: ", path));
}

inline TrainResult train(const Dataset& data, ParameterStore& params,
                         const ModelConfig& mc, const TrainConfig& tc,
                         const LossWeights& lw, const MaskConfig& mk) {
  tc.validate();
  mk.validate();
  lw.validate();
  check(!data.train.empty() && !data.val.empty(), "train: dataset splits missing");
  check(mk.n_modalities == mc.n_modalities, "train: masking/model modality mismatch");

  TrainResult result;
  Rng mask_rng(derive_seed(tc.seed, "mask"));
  ScheduleConfig sched = tc.schedule();
  AdamWConfig opt;
  opt.beta1 = tc.beta1;
  opt.beta2 = tc.beta2;
  opt.eps = tc.adam_eps;
  opt.weight_decay = tc.weight_decay;
  if (!tc.lr_mults.empty()) {
    auto mults = tc.lr_mults;
    opt.lr_mult = [mults](const std::string& name) {
      for (const auto& [prefix, m] : mults)
        if (name.rfind(prefix, 0) == 0) return m;
      return 1.0;
    };
  }

  int n_train = static_cast<int>(data.train.size());
  int global_step = 0;
  TrainLogRecord last{};
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    double lr = lr_at(sched, epoch);
    opt.lr = lr;
    Rng shuffle_rng(derive_seed(tc.seed, "shuffle", static_cast<uint64_t>(epoch)));
    std::vector<int> perm = shuffle_rng.permutation(n_train);
    for (int start = 0; start + 2 <= n_train; start += tc.batch_size) {
      int len = std::min(tc.batch_size, n_train - start);
      if (len < 2) break;  // drop undersized tail batch
      std::vector<int> idx(perm.begin() + start, perm.begin() + start + len);
      Batch batch = make_batch(data.train, idx);

      params.zero_grads();
      BatchLoss bl;
      ModalitySet observed = ModalitySet::all(mc.n_modalities);
      try {
        if (mk.per_sample) {
          std::vector<ModalitySet> masks(static_cast<size_t>(len));
          for (auto& m : masks) m = sample_mask(mk, mask_rng);
          bl = compute_batch_loss_per_sample(mc, params, batch, masks, lw);
        } else {
          observed = sample_mask(mk, mask_rng);
          bl = compute_batch_loss(mc, params, batch, observed, lw);
        }
        check(std::isfinite(bl.total_val), "training loss is not finite");
        backward(bl.total);
        adamw_step(params, opt);
      } catch (const std::exception& e) {
        fail(cat(e.what(), " [last record: ", format_record(last), "]"));
      }

      last = TrainLogRecord{epoch,        global_step, lr,
                            bl.task_val,  bl.align_val, bl.ss_val,
                            bl.proxy_val, bl.total_val, observed.bits};
      result.log.push_back(last);
      ++global_step;
    }

    if ((epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs) {
      double acc = evaluate_split(mc, params, data.val,
                                  ModalitySet::all(mc.n_modalities), tc.eval_batch);
      result.val_history.push_back(acc);
      if (acc > result.best_val_acc) {
        result.best_val_acc = acc;
        result.best_epoch = epoch;
        if (!tc.out_dir.empty()) {
          std::filesystem::create_directories(tc.out_dir);
          result.best_checkpoint = tc.out_dir + "/best.cmps";
          save_checkpoint(params, result.best_checkpoint);
        }
      }
      result.best_history.push_back(result.best_val_acc);
    }
  }
  if (!tc.out_dir.empty()) {
    std::filesystem::create_directories(tc.out_dir);
    result.last_checkpoint = tc.out_dir + "/last.cmps";
    save_checkpoint(params, result.last_checkpoint);
    result.log_path = tc.out_dir + "/train_log.csv";
    write_train_log(result.log, result.log_path);
  }
  return result;
}

// Mean align-loss value over the masked steps of one epoch; NaN when the
// epoch had no masked step.
inline double epoch_align_mean(const std::vector<TrainLogRecord>& log, int epoch,
                               int n_modalities) {
  double sum = 0.0;
  int count = 0;
  uint32_t full = ModalitySet::all(n_modalities).bits;
  for (const auto& r : log) {
    if (r.epoch != epoch || r.observed_bits == full) continue;
    sum += r.align;
    ++count;
  }
  return count ? sum / count : std::nan("");
}

}  // namespace compass
