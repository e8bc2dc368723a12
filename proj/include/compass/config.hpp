// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat, sectioned key=value text format binding the
// dataset, model, masking, loss and training settings together. Unknown
// sections or keys are rejected; dotted overrides ("section.key=value")
// reuse the same setter, and serialize() round-trips exactly.

#pragma once

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "compass/losses.hpp"
#include "compass/masking.hpp"
#include "compass/model.hpp"
#include "compass/synthdata.hpp"
#include "compass/trainer.hpp"

namespace compass {

struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;
  MaskConfig masking;
  LossWeights losses;
  TrainConfig training;
  std::string out_dir;
  int eval_workers = 1;

  // Copies the shared fields (modality count, raw dims, class count) from
  // the dataset section into the dependent sections, then validates.
  void finalize() {
    dataset.validate();
    model.n_modalities = dataset.n_modalities;
    model.raw_dims = dataset.raw_dims;
    model.n_classes = dataset.n_classes;
    masking.n_modalities = dataset.n_modalities;
    model.validate();
    masking.validate();
    losses.validate();
    training.validate();
    config_check(eval_workers >= 1, "paths: eval_workers must be positive");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline int parse_int(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    int r = std::stoi(v, &pos);
    config_check(pos == v.size(), cat("invalid integer '", v, "' for ", where));
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(cat("invalid integer '", v, "' for ", where));
  }
}

inline uint64_t parse_u64(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    uint64_t r = std::stoull(v, &pos);
    config_check(pos == v.size(), cat("invalid integer '", v, "' for ", where));
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(cat("invalid integer '", v, "' for ", where));
  }
}

inline double parse_double(const std::string& v, const std::string& where) {
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    config_check(pos == v.size(), cat("invalid number '", v, "' for ", where));
    return r;
  } catch (const ConfigError&) {
    throw;
  } catch (...) {
    throw ConfigError(cat("invalid number '", v, "' for ", where));
  }
}

inline bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(cat("invalid boolean '", v, "' for ", where, " (use true/false)"));
}

inline std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
  std::vector<int> out;
  for (const auto& tok : split(v, ','))
    if (!tok.empty()) out.push_back(parse_int(tok, where));
  config_check(!out.empty(), cat("empty list for ", where));
  return out;
}

inline std::vector<double> parse_double_list(const std::string& v, const std::string& where) {
  std::vector<double> out;
  for (const auto& tok : split(v, ','))
    if (!tok.empty()) out.push_back(parse_double(tok, where));
  config_check(!out.empty(), cat("empty list for ", where));
  return out;
}

inline FusionMode parse_fusion(const std::string& v) {
  if (v == "sum") return FusionMode::Sum;
  if (v == "concat_linear") return FusionMode::ConcatLinear;
  if (v == "cross_attention") return FusionMode::CrossAttention;
  throw ConfigError(cat("invalid fusion mode '", v,
                        "' (use sum/concat_linear/cross_attention)"));
}

inline SlotFill parse_slot_fill(const std::string& v) {
  if (v == "proxy") return SlotFill::Proxy;
  if (v == "zero") return SlotFill::Zero;
  throw ConfigError(cat("invalid slot_fill '", v, "' (use proxy/zero)"));
}

// "prefix:mult;prefix:mult"; empty string means no multipliers.
inline std::vector<std::pair<std::string, double>> parse_lr_mults(const std::string& v) {
  std::vector<std::pair<std::string, double>> out;
  if (trim(v).empty()) return out;
  for (const auto& entry : split(v, ';')) {
    if (entry.empty()) continue;
    auto colon = entry.rfind(':');
    config_check(colon != std::string::npos,
                 cat("invalid lr_mults entry '", entry, "' (expected prefix:mult)"));
    out.emplace_back(trim(entry.substr(0, colon)),
                     parse_double(trim(entry.substr(colon + 1)), "training.lr_mults"));
  }
  return out;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::ostringstream os;
  os.precision(17);
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ',';
    os << v[i];
  }
  return os.str();
}

inline std::string join_lr_mults(const std::vector<std::pair<std::string, double>>& v) {
  std::ostringstream os;
  os.precision(17);
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) os << ';';
    os << v[i].first << ':' << v[i].second;
  }
  return os.str();
}

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& section,
                             const std::string& key, const std::string& value) {
  using namespace detail;
  std::string where = section + "." + key;
  if (section == "dataset") {
    auto& d = cfg.dataset;
    if (key == "n_modalities") d.n_modalities = parse_int(value, where);
    else if (key == "n_classes") d.n_classes = parse_int(value, where);
    else if (key == "latent_dim") d.latent_dim = parse_int(value, where);
    else if (key == "raw_dims") d.raw_dims = parse_int_list(value, where);
    else if (key == "snrs") d.snrs = parse_double_list(value, where);
    else if (key == "train_per_class") d.train_per_class = parse_int(value, where);
    else if (key == "val_per_class") d.val_per_class = parse_int(value, where);
    else if (key == "test_per_class") d.test_per_class = parse_int(value, where);
    else if (key == "seed") d.seed = parse_u64(value, where);
    else throw ConfigError(cat("unknown key '", where, "'"));
  } else if (section == "model") {
    auto& m = cfg.model;
    if (key == "tokens") m.tokens = parse_int(value, where);
    else if (key == "dim") m.dim = parse_int(value, where);
    else if (key == "heads") m.heads = parse_int(value, where);
    else if (key == "ffn_dim") m.ffn_dim = parse_int(value, where);
    else if (key == "enc_tokens") m.enc_tokens = parse_int_list(value, where);
    else if (key == "enc_dims") m.enc_dims = parse_int_list(value, where);
    else if (key == "enc_hidden") m.enc_hidden = parse_int_list(value, where);
    else if (key == "fusion") m.fusion = parse_fusion(value);
    else if (key == "slot_fill") m.slot_fill = parse_slot_fill(value);
    else if (key == "bn_momentum") m.bn_momentum = parse_double(value, where);
    else if (key == "bn_eps") m.bn_eps = parse_double(value, where);
    else if (key == "ln_eps") m.ln_eps = parse_double(value, where);
    else if (key == "gen_out_gain") m.gen_out_gain = parse_double(value, where);
    else throw ConfigError(cat("unknown key '", where, "'"));
  } else if (section == "masking") {
    auto& k = cfg.masking;
    if (key == "p_drop") k.p_drop = parse_double(value, where);
    else if (key == "per_sample") k.per_sample = parse_bool(value, where);
    else throw ConfigError(cat("unknown key '", where, "'"));
  } else if (section == "losses") {
    auto& l = cfg.losses;
    if (key == "lambda_align") l.lambda_align = parse_double(value, where);
    else if (key == "lambda_ss") l.lambda_ss = parse_double(value, where);
    else if (key == "lambda_proxy") l.lambda_proxy = parse_double(value, where);
    else if (key == "mu_inv") l.mu_inv = parse_double(value, where);
    else if (key == "mu_var") l.mu_var = parse_double(value, where);
    else if (key == "mu_cov") l.mu_cov = parse_double(value, where);
    else if (key == "label_smoothing") l.label_smoothing = parse_double(value, where);
    else throw ConfigError(cat("unknown key '", where, "'"));
  } else if (section == "training") {
    auto& t = cfg.training;
    if (key == "epochs") t.epochs = parse_int(value, where);
    else if (key == "batch_size") t.batch_size = parse_int(value, where);
    else if (key == "base_lr") t.base_lr = parse_double(value, where);
    else if (key == "weight_decay") t.weight_decay = parse_double(value, where);
    else if (key == "warmup_epochs") t.warmup_epochs = parse_int(value, where);
    else if (key == "power") t.power = parse_double(value, where);
    else if (key == "beta1") t.beta1 = parse_double(value, where);
    else if (key == "beta2") t.beta2 = parse_double(value, where);
    else if (key == "adam_eps") t.adam_eps = parse_double(value, where);
    else if (key == "seed") t.seed = parse_u64(value, where);
    else if (key == "eval_every") t.eval_every = parse_int(value, where);
    else if (key == "eval_batch") t.eval_batch = parse_int(value, where);
    else if (key == "lr_mults") t.lr_mults = parse_lr_mults(value);
    else throw ConfigError(cat("unknown key '", where, "'"));
  } else if (section == "paths") {
    if (key == "out_dir") cfg.out_dir = detail::trim(value);
    else if (key == "eval_workers") cfg.eval_workers = detail::parse_int(value, where);
    else throw ConfigError(cat("unknown key '", where, "'"));
  } else {
    throw ConfigError(cat("unknown section '", section, "'"));
  }
}

// Applies a dotted override of the form "section.key=value".
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  auto eq = assignment.find('=');
  config_check(eq != std::string::npos,
               cat("override '", assignment, "' must look like section.key=value"));
  std::string path = detail::trim(assignment.substr(0, eq));
  std::string value = detail::trim(assignment.substr(eq + 1));
  auto dot = path.find('.');
  config_check(dot != std::string::npos,
               cat("override key '", path, "' must look like section.key"));
  set_config_value(cfg, path.substr(0, dot), path.substr(dot + 1), value);
}

inline RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      config_check(line.back() == ']', cat("line ", lineno, ": malformed section header"));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    config_check(eq != std::string::npos, cat("line ", lineno, ": expected key = value"));
    config_check(!section.empty(), cat("line ", lineno, ": key outside any section"));
    set_config_value(base, section, detail::trim(line.substr(0, eq)),
                     detail::trim(line.substr(eq + 1)));
  }
  return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream is(path);
  config_check(static_cast<bool>(is), cat("cannot open config file: ", path));
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

inline std::string serialize(const RunConfig& cfg) {
  using namespace detail;
  std::ostringstream os;
  os.precision(17);
  os << "[dataset]\n";
  os << "n_modalities = " << cfg.dataset.n_modalities << "\n";
  os << "n_classes = " << cfg.dataset.n_classes << "\n";
  os << "latent_dim = " << cfg.dataset.latent_dim << "\n";
  os << "raw_dims = " << join_list(cfg.dataset.raw_dims) << "\n";
  os << "snrs = " << join_list(cfg.dataset.snrs) << "\n";
  os << "train_per_class = " << cfg.dataset.train_per_class << "\n";
  os << "val_per_class = " << cfg.dataset.val_per_class << "\n";
  os << "test_per_class = " << cfg.dataset.test_per_class << "\n";
  os << "seed = " << cfg.dataset.seed << "\n";
  os << "\n[model]\n";
  os << "tokens = " << cfg.model.tokens << "\n";
  os << "dim = " << cfg.model.dim << "\n";
  os << "heads = " << cfg.model.heads << "\n";
  os << "ffn_dim = " << cfg.model.ffn_dim << "\n";
  os << "enc_tokens = " << join_list(cfg.model.enc_tokens) << "\n";
  os << "enc_dims = " << join_list(cfg.model.enc_dims) << "\n";
  os << "enc_hidden = " << join_list(cfg.model.enc_hidden) << "\n";
  os << "fusion = " << to_string(cfg.model.fusion) << "\n";
  os << "slot_fill = " << to_string(cfg.model.slot_fill) << "\n";
  os << "bn_momentum = " << cfg.model.bn_momentum << "\n";
  os << "bn_eps = " << cfg.model.bn_eps << "\n";
  os << "ln_eps = " << cfg.model.ln_eps << "\n";
  os << "gen_out_gain = " << cfg.model.gen_out_gain << "\n";
  os << "\n[masking]\n";
  os << "p_drop = " << cfg.masking.p_drop << "\n";
  os << "per_sample = " << (cfg.masking.per_sample ? "true" : "false") << "\n";
  os << "\n[losses]\n";
  os << "lambda_align = " << cfg.losses.lambda_align << "\n";
  os << "lambda_ss = " << cfg.losses.lambda_ss << "\n";
  os << "lambda_proxy = " << cfg.losses.lambda_proxy << "\n";
  os << "mu_inv = " << cfg.losses.mu_inv << "\n";
  os << "mu_var = " << cfg.losses.mu_var << "\n";
  os << "mu_cov = " << cfg.losses.mu_cov << "\n";
  os << "label_smoothing = " << cfg.losses.label_smoothing << "\n";
  os << "\n[training]\n";
  os << "epochs = " << cfg.training.epochs << "\n";
  os << "batch_size = " << cfg.training.batch_size << "\n";
  os << "base_lr = " << cfg.training.base_lr << "\n";
  os << "weight_decay = " << cfg.training.weight_decay << "\n";
  os << "warmup_epochs = " << cfg.training.warmup_epochs << "\n";
  os << "power = " << cfg.training.power << "\n";
  os << "beta1 = " << cfg.training.beta1 << "\n";
  os << "beta2 = " << cfg.training.beta2 << "\n";
  os << "adam_eps = " << cfg.training.adam_eps << "\n";
  os << "seed = " << cfg.training.seed << "\n";
  os << "eval_every = " << cfg.training.eval_every << "\n";
  os << "eval_batch = " << cfg.training.eval_batch << "\n";
  os << "lr_mults = " << join_lr_mults(cfg.training.lr_mults) << "\n";
  os << "\n[paths]\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  os << "eval_workers = " << cfg.eval_workers << "\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

inline std::string default_out_root() {
  const char* env = std::getenv("COMPASS_OUT_ROOT");
  return env && *env ? std::string(env) : std::string("runs");
}

// Desk-scale defaults: small enough to train on one CPU core in seconds.
inline RunConfig desk_preset() {
  RunConfig cfg;
  cfg.out_dir = default_out_root() + "/desk";
  return cfg;
}

// Reference-scale settings: L=32 tokens at width 512 with 8 heads, the
// published loss weights, base lr 1e-4 under a 5-epoch warmup polynomial
// schedule. Slow on a desk CPU; kept for fidelity.
inline RunConfig paper_scale_preset() {
  RunConfig cfg;
  cfg.dataset.n_classes = 8;
  cfg.dataset.latent_dim = 32;
  cfg.dataset.raw_dims = {128, 128, 128};
  cfg.dataset.snrs = {1.5, 1.5, 1.5};
  cfg.dataset.train_per_class = 100;
  cfg.dataset.val_per_class = 20;
  cfg.dataset.test_per_class = 40;
  cfg.model.tokens = 32;
  cfg.model.dim = 512;
  cfg.model.heads = 8;
  cfg.model.ffn_dim = 1024;
  cfg.model.enc_tokens = {16, 16, 16};
  cfg.model.enc_dims = {64, 64, 64};
  cfg.model.enc_hidden = {256, 256, 256};
  cfg.training.epochs = 100;
  cfg.training.batch_size = 32;
  cfg.training.base_lr = 1e-4;
  cfg.training.weight_decay = 5e-4;
  cfg.training.warmup_epochs = 5;
  cfg.training.power = 0.9;
  cfg.out_dir = default_out_root() + "/paper-scale";
  return cfg;
}

inline RunConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper-scale") return paper_scale_preset();
  throw ConfigError(cat("unknown preset '", name, "' (use desk or paper-scale)"));
}

}  // namespace compass
