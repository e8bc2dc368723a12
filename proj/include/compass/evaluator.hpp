// Copyright 2026 COMPASS Contributors
// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive missingness evaluation: every non-empty observed subset gets a
// top-1 accuracy row, with per-cardinality and overall means. Also the
// class-geometry metrics (cross-modal compactness, inter-class separation)
// computed on real global tokens under full-modality forwards.

#pragma once

#include <cmath>
#include <fstream>
#include <future>
#include <map>
#include <string>
#include <vector>

#include "compass/model.hpp"
#include "compass/trainer.hpp"

namespace compass {

struct SubsetRow {
  ModalitySet observed;
  double accuracy = 0.0;
  std::string category;
};

struct SubsetReport {
  int n_modalities = 0;
  std::vector<SubsetRow> rows;  // ordered by |O|, then bit pattern
  std::map<std::string, double> category_means;
  double overall_mean = 0.0;
};

inline SubsetReport sweep_subsets(const ModelConfig& cfg, ParameterStore& params,
                                  const std::vector<Sample>& split,
                                  int eval_batch = 64, int workers = 1) {
  SubsetReport rep;
  rep.n_modalities = cfg.n_modalities;
  std::vector<ModalitySet> subsets = all_nonempty_subsets(cfg.n_modalities);
  std::vector<double> acc(subsets.size(), 0.0);
  if (workers <= 1) {
    for (size_t s = 0; s < subsets.size(); ++s)
      acc[s] = evaluate_split(cfg, params, split, subsets[s], eval_batch);
  } else {
    // Evaluation is read-only on parameters, so subsets fan out safely.
    std::vector<std::future<double>> futs(subsets.size());
    for (size_t s = 0; s < subsets.size(); ++s)
      futs[s] = std::async(std::launch::async, [&, s] {
        return evaluate_split(cfg, params, split, subsets[s], eval_batch);
      });
    for (size_t s = 0; s < subsets.size(); ++s) acc[s] = futs[s].get();
  }
  std::map<std::string, std::pair<double, int>> cat_acc;
  double total = 0.0;
  for (size_t s = 0; s < subsets.size(); ++s) {
    SubsetRow row{subsets[s], acc[s], subset_category(subsets[s].count(), cfg.n_modalities)};
    cat_acc[row.category].first += acc[s];
    cat_acc[row.category].second += 1;
    total += acc[s];
    rep.rows.push_back(std::move(row));
  }
  for (const auto& [name, pr] : cat_acc)
    rep.category_means[name] = pr.first / pr.second;
  rep.overall_mean = total / static_cast<double>(subsets.size());
  return rep;
}

// Side-by-side reports for the requested ablation modes on one trained
// model. "full" and "zero_fill" share the main checkpoint (zero_fill swaps
// the slot-fill rule at inference); "proxy_no_align" needs its own
// checkpoint trained with all auxiliary weights at zero.
inline std::map<std::string, SubsetReport> sweep_ablation(
    const ModelConfig& cfg, ParameterStore& params, const std::vector<Sample>& split,
    const std::vector<std::string>& modes, ParameterStore* no_align_params = nullptr,
    int eval_batch = 64, int workers = 1) {
  std::map<std::string, SubsetReport> out;
  for (const std::string& mode : modes) {
    if (mode == "full") {
      ModelConfig c = cfg;
      c.slot_fill = SlotFill::Proxy;
      out[mode] = sweep_subsets(c, params, split, eval_batch, workers);
    } else if (mode == "zero_fill") {
      ModelConfig c = cfg;
      c.slot_fill = SlotFill::Zero;
      out[mode] = sweep_subsets(c, params, split, eval_batch, workers);
    } else if (mode == "proxy_no_align") {
      check(no_align_params != nullptr,
            "sweep_ablation: proxy_no_align mode requires its checkpoint");
      ModelConfig c = cfg;
      c.slot_fill = SlotFill::Proxy;
      out[mode] = sweep_subsets(c, *no_align_params, split, eval_batch, workers);
    } else {
      fail(cat("sweep_ablation: unknown mode '", mode, "'"));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Representation geometry
// ---------------------------------------------------------------------------

struct GeometryRow {
  int class_id = 0;
  double compactness = 0.0;  // mean pairwise cosine similarity of the class's
                             // per-modality centroids, in [-1, 1]
  double separation = 0.0;   // min cosine distance to other classes' centroids
                             // within a modality, in [0, 2]
};

struct GeometryReport {
  std::vector<GeometryRow> rows;
  double mean_compactness = 0.0;
  double mean_separation = 0.0;
};

namespace detail {

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  check(denom > 0, "cosine: zero-norm centroid");
  return dot / denom;
}

}  // namespace detail

inline GeometryReport geometry_metrics(const ModelConfig& cfg, ParameterStore& params,
                                       const std::vector<Sample>& split,
                                       int eval_batch = 64) {
  check(!split.empty(), "geometry_metrics: empty split");
  int c_count = cfg.n_classes;
  int n = cfg.n_modalities;
  int d = cfg.dim;
  // centroid[class][modality] = mean real global token over class samples
  std::vector<std::vector<std::vector<double>>> centroid(
      static_cast<size_t>(c_count),
      std::vector<std::vector<double>>(static_cast<size_t>(n),
                                       std::vector<double>(static_cast<size_t>(d), 0.0)));
  std::vector<int> class_count(static_cast<size_t>(c_count), 0);
  ModalitySet full = ModalitySet::all(n);
  int total = static_cast<int>(split.size());
  for (int start = 0; start < total; start += eval_batch) {
    int len = std::min(eval_batch, total - start);
    std::vector<int> idx(static_cast<size_t>(len));
    for (int i = 0; i < len; ++i) idx[static_cast<size_t>(i)] = start + i;
    Batch b = make_batch(split, idx);
    ForwardResult fr = forward_batch(cfg, params, b, full, /*train_mode=*/false);
    for (int r = 0; r < len; ++r) {
      int y = b.labels[static_cast<size_t>(r)];
      ++class_count[static_cast<size_t>(y)];
      for (int m = 0; m < n; ++m) {
        const Tensor& t = fr.real_tokens.at(m).vec.value();
        for (int k = 0; k < d; ++k)
          centroid[static_cast<size_t>(y)][static_cast<size_t>(m)][static_cast<size_t>(k)] +=
              t.at(r, k);
      }
    }
  }
  for (int c = 0; c < c_count; ++c) {
    check(class_count[static_cast<size_t>(c)] > 0,
          cat("geometry_metrics: class ", c, " absent from split"));
    for (int m = 0; m < n; ++m)
      for (int k = 0; k < d; ++k)
        centroid[static_cast<size_t>(c)][static_cast<size_t>(m)][static_cast<size_t>(k)] /=
            class_count[static_cast<size_t>(c)];
  }

  GeometryReport rep;
  for (int c = 0; c < c_count; ++c) {
    GeometryRow row;
    row.class_id = c;
    double sim_sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < n; ++a)
      for (int b2 = a + 1; b2 < n; ++b2) {
        sim_sum += detail::cosine(centroid[static_cast<size_t>(c)][static_cast<size_t>(a)],
                                  centroid[static_cast<size_t>(c)][static_cast<size_t>(b2)]);
        ++pairs;
      }
    row.compactness = pairs ? sim_sum / pairs : 1.0;
    double min_dist = 2.0;
    for (int other = 0; other < c_count; ++other) {
      if (other == c) continue;
      for (int m = 0; m < n; ++m) {
        double dist = 1.0 - detail::cosine(centroid[static_cast<size_t>(c)][static_cast<size_t>(m)],
                                           centroid[static_cast<size_t>(other)][static_cast<size_t>(m)]);
        min_dist = std::min(min_dist, dist);
      }
    }
    row.separation = min_dist;
    rep.mean_compactness += row.compactness;
    rep.mean_separation += row.separation;
    rep.rows.push_back(row);
  }
  rep.mean_compactness /= c_count;
  rep.mean_separation /= c_count;
  return rep;
}

// ---------------------------------------------------------------------------
// Report writers (CSV and aligned Markdown)
// ---------------------------------------------------------------------------

inline void write_subset_csv(const SubsetReport& rep, const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), cat("cannot open report for writing: ", path));
  os << "observed,accuracy_pct,category\n";
  os.precision(10);
  for (const auto& r : rep.rows)
    os << r.observed.letters() << ',' << 100.0 * r.accuracy << ',' << r.category << '\n';
  for (const auto& [name, mean] : rep.category_means)
    os << "avg_" << name << ',' << 100.0 * mean << ",summary\n";
  os << "avg_overall," << 100.0 * rep.overall_mean << ",summary\n";
  check(static_cast<bool>(os), cat("report write failed: ", path));
}

inline void write_subset_markdown(const SubsetReport& rep, const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), cat("cannot open report for writing: ", path));
  os << "| Observed | Accuracy (%) | Category |\n";
  os << "|----------|--------------|----------|\n";
  char buf[64];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * r.accuracy);
    os << "| " << r.observed.letters() << " | " << buf << " | " << r.category << " |\n";
  }
  for (const auto& [name, mean] : rep.category_means) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * mean);
    os << "| avg " << name << " | " << buf << " | summary |\n";
  }
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * rep.overall_mean);
  os << "| avg overall | " << buf << " | summary |\n";
  check(static_cast<bool>(os), cat("report write failed: ", path));
}

inline void write_geometry_csv(const GeometryReport& rep, const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), cat("cannot open report for writing: ", path));
  os << "class,compactness,separation\n";
  os.precision(10);
  for (const auto& r : rep.rows)
    os << r.class_id << ',' << r.compactness << ',' << r.separation << '\n';
  os << "mean," << rep.mean_compactness << ',' << rep.mean_separation << '\n';
  check(static_cast<bool>(os), cat("report write failed: ", path));
}

inline void write_geometry_markdown(const GeometryReport& rep, const std::string& path) {
  std::ofstream os(path);
  check(static_cast<bool>(os), cat("cannot open report for writing: ", path));
  os << "| Class | Compactness | Separation |\n";
  os << "|-------|-------------|------------|\n";
  char buf[64];
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%.4f | %.4f", r.compactness, r.separation);
    os << "| " << r.class_id << " | " << buf << " |\n";
  }
  std::snprintf(buf, sizeof buf, "%.4f | %.4f", rep.mean_compactness, rep.mean_separation);
  os << "| mean | " << buf << " |\n";
  check(static_cast<bool>(os), cat("report write failed: ", path));
}

}  // namespace compass
