// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "compass/autodiff.hpp"
#include "compass/tensor.hpp"

namespace compass {

// Named collection of learnable (and buffer) tensors plus per-parameter
// AdamW state. Iteration order is lexicographic via std::map, which keeps
// optimizer updates and checkpoint layout deterministic.
class ParameterStore {
 public:
  struct Entry {
    Var var;
    bool trainable = true;
    Tensor m;  // first moment
    Tensor v;  // second moment
    int64_t step = 0;
  };

  Var create(const std::string& name, Tensor init, bool trainable = true) {
    check(!entries_.count(name), cat("duplicate parameter '", name, "'"));
    Entry e;
    e.var = Var::leaf(std::move(init), trainable, name);
    e.trainable = trainable;
    if (trainable) {
      e.m = Tensor(e.var.value().shape());
      e.v = Tensor(e.var.value().shape());
    }
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.var;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Var get(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), cat("unknown parameter '", name, "'"));
    return it->second.var;
  }

  Tensor& value(const std::string& name) { return get(name).value(); }

  // Allocates (or re-zeros) gradients for every trainable parameter so a
  // following backward pass accumulates into a defined state.
  void zero_grads() {
    for (auto& [name, e] : entries_) {
      if (!e.trainable) continue;
      e.var.node()->ensure_grad().fill(0.0);
    }
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
  }

  size_t size() const { return entries_.size(); }

  // Total element count over parameters whose name starts with prefix.
  int64_t count_elements(const std::string& prefix = "") const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_)
      if (name.rfind(prefix, 0) == 0) n += e.var.value().numel();
    return n;
  }

  // Number of distinct parameter groups "<prefix><head>." where head is the
  // next dotted component after the prefix.
  int count_groups(const std::string& prefix) const {
    std::map<std::string, bool> groups;
    for (const auto& [name, e] : entries_) {
      if (name.rfind(prefix, 0) != 0) continue;
      std::string rest = name.substr(prefix.size());
      auto dot = rest.find('.');
      groups[dot == std::string::npos ? rest : rest.substr(0, dot)] = true;
    }
    return static_cast<int>(groups.size());
  }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace compass
