// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "compass/common.hpp"

namespace compass {

// Subset of the N modality slots, held as a bitmask. Missing set is the
// complement; the observed set must be non-empty wherever inference runs.
struct ModalitySet {
  uint32_t bits = 0;
  int n = 0;

  static ModalitySet all(int n) {
    check(n >= 1 && n <= 31, "ModalitySet: n out of range");
    return {static_cast<uint32_t>((1u << n) - 1u), n};
  }
  static ModalitySet none(int n) { return {0, n}; }
  static ModalitySet of(std::initializer_list<int> members, int n) {
    ModalitySet s = none(n);
    for (int m : members) s.add(m);
    return s;
  }
  static ModalitySet from_bits(uint32_t bits, int n) {
    check(bits < (1u << n), "ModalitySet: bits out of range");
    return {bits, n};
  }

  void add(int m) {
    check(m >= 0 && m < n, "ModalitySet: index out of range");
    bits |= (1u << m);
  }
  bool contains(int m) const { return (bits >> m) & 1u; }
  int count() const { return __builtin_popcount(bits); }
  bool empty() const { return bits == 0; }
  bool is_full() const { return bits == (1u << n) - 1u; }

  ModalitySet complement() const {
    return {~bits & ((1u << n) - 1u), n};
  }

  std::vector<int> members() const {
    std::vector<int> out;
    for (int m = 0; m < n; ++m)
      if (contains(m)) out.push_back(m);
    return out;
  }

  // "A", "AC", "ABD", ... with modality index 0 as 'A'.
  std::string letters() const {
    std::string s;
    for (int m = 0; m < n; ++m)
      if (contains(m)) s += static_cast<char>('A' + m);
    return s;
  }

  bool operator==(const ModalitySet& o) const { return bits == o.bits && n == o.n; }
  bool operator<(const ModalitySet& o) const { return bits < o.bits; }
};

// All non-empty subsets ordered by cardinality, then by bit pattern. This is
// the row order of subset reports: singles first, the full set last.
inline std::vector<ModalitySet> all_nonempty_subsets(int n) {
  std::vector<ModalitySet> out;
  for (int k = 1; k <= n; ++k)
    for (uint32_t b = 1; b < (1u << n); ++b)
      if (__builtin_popcount(b) == k) out.push_back(ModalitySet::from_bits(b, n));
  return out;
}

inline std::string subset_category(int observed_count, int n) {
  if (observed_count == n) return "full";
  switch (observed_count) {
    case 1: return "single";
    case 2: return "dual";
    case 3: return "triple";
    case 4: return "quad";
    case 5: return "quint";
    default: return cat(observed_count, "-set");
  }
}

}  // namespace compass
