// Copyright 2026 The repsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Cross-model comparison of RDMs: rank correlation, per-batch similarity
// reports, paired t-tests across batches and Ward clustering of models.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "repsim/errors.hpp"
#include "repsim/parallel.hpp"
#include "repsim/radix_sort.hpp"
#include "repsim/rdm.hpp"
#include "repsim/stats.hpp"

namespace repsim {

/// Row-major dense square matrix of doubles.
struct SquareMatrix {
  std::size_t size = 0;
  std::vector<double> values;

  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t m, double fill = 0.0) : size(m), values(m * m, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return values[i * size + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * size + j]; }
};

// ---------------------------------------------------------------------------
// Ranking and Spearman

/// 1-based ranks with ties replaced by the mean of the ranks they span.
inline std::vector<double> rank_average_ties(std::span<const double> values) {
  const std::size_t n = values.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(values[i])) throw ValidationError("NaN at position " + std::to_string(i));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && values[order[end]] == values[order[start]]) ++end;
    // Positions start..end-1 hold ranks start+1..end.
    const double mean_rank = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t p = start; p < end; ++p) ranks[order[p]] = mean_rank;
    start = end;
  }
  return ranks;
}

/// Tie-averaged ranks stored doubled (2 * rank) so that half-integer ranks
/// stay exact integers.
struct DoubledRanks {
  std::vector<std::uint32_t> values;
};

inline DoubledRanks doubled_ranks(std::span<const float> values) {
  const std::size_t n = values.size();
  if (n >= (std::size_t(1) << 31)) throw ValidationError("vector too long for 32-bit ranks");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(values[i])) throw ValidationError("NaN at position " + std::to_string(i));
  }
  DoubledRanks out{std::vector<std::uint32_t>(n)};
  const std::vector<std::uint64_t> sorted = packed_argsort(values);
  for (std::size_t start = 0; start < n;) {
    const std::uint64_t key = sorted[start] >> 32;
    std::size_t end = start + 1;
    while (end < n && (sorted[end] >> 32) == key) ++end;
    const auto r2 = static_cast<std::uint32_t>(start + 1 + end);
    for (std::size_t p = start; p < end; ++p) out.values[sorted[p] & 0xffffffffu] = r2;
    start = end;
  }
  return out;
}

/// Pearson correlation of two doubled-rank vectors. Moment sums are exact
/// 128-bit integers; only the final ratio is rounded.
inline double correlate_ranks(const DoubledRanks& a, const DoubledRanks& b) {
  const std::size_t n = a.values.size();
  if (n != b.values.size()) {
    throw AlignmentError("length mismatch: " + std::to_string(n) + " vs " + std::to_string(b.values.size()));
  }
  if (n < 2) throw ValidationError("Spearman needs at least 2 values");
  using i128 = __int128;
  i128 sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint64_t ra = a.values[k], rb = b.values[k];
    sa += ra;
    sb += rb;
    saa += ra * ra;
    sbb += rb * rb;
    sab += ra * rb;
  }
  const i128 nn = static_cast<i128>(n);
  const i128 cov = nn * sab - sa * sb;
  const i128 va = nn * saa - sa * sa;
  const i128 vb = nn * sbb - sb * sb;
  if (va == 0 || vb == 0) {
    throw UndefinedCorrelationError("Spearman correlation undefined: all values tied in one input");
  }
  const double r = static_cast<double>(cov) / std::sqrt(static_cast<double>(va) * static_cast<double>(vb));
  return std::clamp(r, -1.0, 1.0);
}

/// Spearman rank correlation with tie-averaged ranks.
inline double spearman(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw AlignmentError("length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw ValidationError("Spearman needs at least 2 values");
  const DoubledRanks ra = doubled_ranks(a);
  const DoubledRanks rb = doubled_ranks(b);
  return correlate_ranks(ra, rb);
}

/// Throws AlignmentError unless both RDMs list the same items in the same order.
inline void check_same_items(const Rdm& a, const Rdm& b) {
  if (a.n_items() != b.n_items()) {
    throw AlignmentError("RDMs cover different item counts: " + std::to_string(a.n_items()) + " vs " +
                         std::to_string(b.n_items()));
  }
  if (item_order_hash(a.labels()) != item_order_hash(b.labels())) {
    throw AlignmentError("RDMs list different items or a different item order");
  }
}

inline double spearman(const Rdm& a, const Rdm& b) {
  check_same_items(a, b);
  return spearman(a.values(), b.values());
}

// ---------------------------------------------------------------------------
// Similarity report

struct SimilarityReport {
  std::vector<std::string> model_ids;
  std::vector<std::uint64_t> batch_ids;
  std::vector<SquareMatrix> per_batch;  // aligned with batch_ids
  SquareMatrix mean, range_lo, range_hi;
  std::vector<std::string> baseline_models;
  /// Per model: mean similarity to the other non-baseline models; empty
  /// when there is no such model.
  std::vector<std::optional<double>> mean_cross_model;
  /// [batch][model], same definition restricted to one batch.
  std::vector<std::vector<std::optional<double>>> cross_model_per_batch;
};

struct SimilarityOptions {
  std::set<std::string> baseline_models;
};

using RdmKey = std::pair<std::string, std::uint64_t>;  // (model_id, batch_id)

namespace detail {

inline std::optional<double> cross_model_mean(const SquareMatrix& m, std::size_t model,
                                              const std::vector<std::string>& ids,
                                              const std::set<std::string>& baselines) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t j = 0; j < m.size; ++j) {
    if (j == model || baselines.count(ids[j])) continue;
    sum += m(model, j);
    ++count;
  }
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace detail

/// Builds the report from a set of keys and a loader, so callers can keep
/// only one batch of RDMs resident. Each RDM is ranked once; pairwise
/// correlations then reuse the ranks.
inline SimilarityReport build_similarity_report(const std::set<RdmKey>& keys,
                                                const std::function<Rdm(const RdmKey&)>& load,
                                                const SimilarityOptions& opts = {}) {
  SimilarityReport report;
  std::set<std::string> models;
  std::set<std::uint64_t> batches;
  for (const auto& [model, batch] : keys) {
    models.insert(model);
    batches.insert(batch);
  }
  if (models.empty()) throw CompletenessError("no RDMs supplied");
  report.model_ids.assign(models.begin(), models.end());
  report.batch_ids.assign(batches.begin(), batches.end());
  report.baseline_models.assign(opts.baseline_models.begin(), opts.baseline_models.end());
  for (const auto& model : report.model_ids) {
    for (auto batch : report.batch_ids) {
      if (!keys.count({model, batch})) {
        throw CompletenessError("missing RDM for (model " + model + ", batch " + std::to_string(batch) + ")");
      }
    }
  }

  const std::size_t m = report.model_ids.size();
  for (auto batch : report.batch_ids) {
    std::vector<DoubledRanks> ranks(m);
    std::string order_hash;
    std::size_t n_items = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const Rdm rdm = load({report.model_ids[i], batch});
      const std::string h = item_order_hash(rdm.labels());
      if (i == 0) {
        order_hash = h;
        n_items = rdm.n_items();
      } else if (rdm.n_items() != n_items || h != order_hash) {
        throw AlignmentError("batch " + std::to_string(batch) + ": model " + report.model_ids[i] +
                             " covers different items than model " + report.model_ids[0]);
      }
      ranks[i] = doubled_ranks(rdm.values());
    }
    SquareMatrix rho(m, 1.0);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) pairs.emplace_back(i, j);
    parallel_for(pairs.size(), [&](std::size_t p) {
      const auto [i, j] = pairs[p];
      const double r = correlate_ranks(ranks[i], ranks[j]);
      rho(i, j) = r;
      rho(j, i) = r;
    });
    report.per_batch.push_back(std::move(rho));
  }

  report.mean = SquareMatrix(m);
  report.range_lo = SquareMatrix(m, std::numeric_limits<double>::infinity());
  report.range_hi = SquareMatrix(m, -std::numeric_limits<double>::infinity());
  for (const auto& rho : report.per_batch) {
    for (std::size_t k = 0; k < m * m; ++k) {
      report.mean.values[k] += rho.values[k];
      report.range_lo.values[k] = std::min(report.range_lo.values[k], rho.values[k]);
      report.range_hi.values[k] = std::max(report.range_hi.values[k], rho.values[k]);
    }
  }
  for (auto& v : report.mean.values) v /= static_cast<double>(report.per_batch.size());
  for (std::size_t k = 0; k < m * m; ++k) {
    // Keep lo <= mean <= hi despite rounding in the mean.
    report.mean.values[k] = std::clamp(report.mean.values[k], report.range_lo.values[k], report.range_hi.values[k]);
  }

  for (std::size_t i = 0; i < m; ++i) {
    report.mean_cross_model.push_back(
        detail::cross_model_mean(report.mean, i, report.model_ids, opts.baseline_models));
  }
  for (const auto& rho : report.per_batch) {
    std::vector<std::optional<double>> row;
    for (std::size_t i = 0; i < m; ++i) {
      row.push_back(detail::cross_model_mean(rho, i, report.model_ids, opts.baseline_models));
    }
    report.cross_model_per_batch.push_back(std::move(row));
  }
  return report;
}

inline SimilarityReport build_similarity_report(const std::map<RdmKey, Rdm>& rdms,
                                                const SimilarityOptions& opts = {}) {
  std::set<RdmKey> keys;
  for (const auto& [key, rdm] : rdms) keys.insert(key);
  return build_similarity_report(keys, [&](const RdmKey& key) { return rdms.at(key); }, opts);
}

inline nlohmann::ordered_json to_json(const SquareMatrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < m.size; ++i) {
    auto row = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < m.size; ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace detail {
inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const SimilarityReport& r) {
  nlohmann::ordered_json j;
  j["model_ids"] = r.model_ids;
  j["batch_ids"] = r.batch_ids;
  j["baseline_models"] = r.baseline_models;
  j["mean"] = to_json(r.mean);
  j["range_lo"] = to_json(r.range_lo);
  j["range_hi"] = to_json(r.range_hi);
  auto& cross = j["mean_cross_model"] = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < r.model_ids.size(); ++i) cross[r.model_ids[i]] = detail::optional_json(r.mean_cross_model[i]);
  auto& per_batch = j["per_batch"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < r.batch_ids.size(); ++b) {
    nlohmann::ordered_json entry;
    entry["batch_id"] = r.batch_ids[b];
    entry["spearman"] = to_json(r.per_batch[b]);
    auto& c = entry["mean_cross_model"] = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < r.model_ids.size(); ++i) c[r.model_ids[i]] = detail::optional_json(r.cross_model_per_batch[b][i]);
    per_batch.push_back(std::move(entry));
  }
  return j;
}

namespace detail {
inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}
}  // namespace detail

/// One row per unordered model pair: mean and range of rho across batches.
inline std::string similarity_pairs_csv(const SimilarityReport& r) {
  std::string out = "model_a,model_b,mean_spearman,range_lo,range_hi,n_batches\n";
  for (std::size_t i = 0; i < r.model_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < r.model_ids.size(); ++j) {
      out += r.model_ids[i] + ',' + r.model_ids[j] + ',' + detail::fmt_real(r.mean(i, j)) + ',' +
             detail::fmt_real(r.range_lo(i, j)) + ',' + detail::fmt_real(r.range_hi(i, j)) + ',' +
             std::to_string(r.batch_ids.size()) + '\n';
    }
  }
  return out;
}

/// Per-model mean similarity to the other non-baseline models, with its
/// range over batches.
inline std::string model_means_csv(const SimilarityReport& r) {
  std::string out = "model,is_baseline,mean_cross_model,range_lo,range_hi\n";
  for (std::size_t i = 0; i < r.model_ids.size(); ++i) {
    const bool baseline = std::find(r.baseline_models.begin(), r.baseline_models.end(), r.model_ids[i]) !=
                          r.baseline_models.end();
    out += r.model_ids[i] + ',' + (baseline ? "1" : "0") + ',';
    if (!r.mean_cross_model[i]) {
      out += ",,\n";
      continue;
    }
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& row : r.cross_model_per_batch) {
      lo = std::min(lo, *row[i]);
      hi = std::max(hi, *row[i]);
    }
    out += detail::fmt_real(*r.mean_cross_model[i]) + ',' + detail::fmt_real(lo) + ',' + detail::fmt_real(hi) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Paired t-test

enum class Sides { TwoSided, Less, Greater };

inline Sides parse_sides(std::string_view s) {
  if (s == "two-sided") return Sides::TwoSided;
  if (s == "less") return Sides::Less;
  if (s == "greater") return Sides::Greater;
  throw ValidationError("unknown sides '" + std::string(s) + "' (expected two-sided|less|greater)");
}

struct PairedTestResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  std::size_t dof = 0;
  std::size_t n_pairs = 0;
};

/// Paired t-test on x - y. Less / Greater test mean(x - y) < 0 / > 0.
inline PairedTestResult paired_t_test(std::span<const double> x, std::span<const double> y,
                                      Sides sides = Sides::TwoSided) {
  if (x.size() != y.size()) {
    throw AlignmentError("paired samples differ in length: " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  }
  const std::size_t n = x.size();
  if (n < 2) throw ValidationError("paired t-test needs at least 2 pairs");
  double mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i] - y[i];
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = (x[i] - y[i]) - mean;
    ss += e * e;
  }
  if (ss == 0.0) throw DegenerateVarianceError("paired differences have zero variance");
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const double dof = static_cast<double>(n - 1);
  double p = 1.0;
  switch (sides) {
    case Sides::TwoSided: p = 2.0 * stats::student_t_cdf(-std::fabs(t), dof); break;
    case Sides::Less: p = stats::student_t_cdf(t, dof); break;
    case Sides::Greater: p = stats::student_t_sf(t, dof); break;
  }
  return {t, std::clamp(p, 0.0, 1.0), n - 1, n};
}

// ---------------------------------------------------------------------------
// Ward clustering

enum class ClusterTransform { OneMinus, Arccos };

inline ClusterTransform parse_cluster_transform(std::string_view s) {
  if (s == "one-minus") return ClusterTransform::OneMinus;
  if (s == "arccos") return ClusterTransform::Arccos;
  throw ValidationError("unknown cluster transform '" + std::string(s) + "' (expected one-minus|arccos)");
}

struct Merge {
  std::size_t cluster_a = 0;  // smaller id
  std::size_t cluster_b = 0;
  double height = 0.0;
  std::size_t size = 0;
};

/// Agglomeration record in the usual convention: leaves are 0..M-1 and the
/// cluster created by merge k has id M + k.
struct Linkage {
  std::size_t n_leaves = 0;
  std::vector<Merge> merges;
};

/// Ward's minimum-variance clustering of models from a similarity matrix,
/// using the Lance-Williams recurrence on dissimilarities
///   d(k, a+b) = sqrt(((n_a+n_k) d_ak^2 + (n_b+n_k) d_bk^2 - n_k d_ab^2) / (n_a+n_b+n_k)).
/// Ties pick the lexicographically smallest (id_a, id_b) pair.
inline Linkage ward_linkage(const SquareMatrix& similarity,
                            ClusterTransform transform = ClusterTransform::OneMinus) {
  const std::size_t m = similarity.size;
  if (m == 0) throw ValidationError("empty similarity matrix");
  for (std::size_t i = 0; i < m; ++i) {
    if (std::fabs(similarity(i, i) - 1.0) > 1e-9) {
      throw ValidationError("similarity diagonal must be 1 (entry " + std::to_string(i) + ")");
    }
    for (std::size_t j = i + 1; j < m; ++j) {
      if (!std::isfinite(similarity(i, j)) || std::fabs(similarity(i, j) - similarity(j, i)) > 1e-9) {
        throw ValidationError("similarity matrix is not symmetric at (" + std::to_string(i) + ", " +
                              std::to_string(j) + ")");
      }
    }
  }
  const std::size_t total = 2 * m - 1;
  std::vector<double> dist(total * total, 0.0);
  auto D = [&](std::size_t a, std::size_t b) -> double& { return dist[a * total + b]; };
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const double rho = std::clamp(0.5 * (similarity(i, j) + similarity(j, i)), -1.0, 1.0);
      D(i, j) = transform == ClusterTransform::OneMinus ? 1.0 - rho : std::acos(rho);
    }
  }
  std::vector<std::size_t> size(total, 1);
  std::vector<std::size_t> active(m);
  std::iota(active.begin(), active.end(), std::size_t(0));

  Linkage out{m, {}};
  for (std::size_t step = 0; step + 1 < m; ++step) {
    std::size_t best_a = 0, best_b = 0;
    double best = std::numeric_limits<double>::infinity();
    // `active` is ascending, so the first strict minimum is the smallest pair.
    for (std::size_t p = 0; p < active.size(); ++p) {
      for (std::size_t q = p + 1; q < active.size(); ++q) {
        const double v = D(active[p], active[q]);
        if (v < best) {
          best = v;
          best_a = active[p];
          best_b = active[q];
        }
      }
    }
    const std::size_t merged = m + step;
    size[merged] = size[best_a] + size[best_b];
    out.merges.push_back({best_a, best_b, best, size[merged]});
    for (std::size_t k : active) {
      if (k == best_a || k == best_b) continue;
      const double na = static_cast<double>(size[best_a]);
      const double nb = static_cast<double>(size[best_b]);
      const double nk = static_cast<double>(size[k]);
      const double v = ((na + nk) * D(k, best_a) * D(k, best_a) + (nb + nk) * D(k, best_b) * D(k, best_b) -
                        nk * best * best) /
                       (na + nb + nk);
      D(k, merged) = D(merged, k) = std::sqrt(std::max(v, 0.0));
    }
    std::erase(active, best_a);
    std::erase(active, best_b);
    active.push_back(merged);
  }
  return out;
}

/// Newick tree with branch lengths equal to height differences.
inline std::string to_newick(const Linkage& linkage, const std::vector<std::string>& labels) {
  const std::size_t m = linkage.n_leaves;
  if (labels.size() != m) throw ValidationError("label count does not match leaf count");
  if (m == 1) return labels[0] + ";";
  std::function<std::string(std::size_t, double)> node = [&](std::size_t id, double parent_height) -> std::string {
    if (id < m) return labels[id] + ":" + detail::fmt_real(parent_height);
    const Merge& mg = linkage.merges[id - m];
    return "(" + node(mg.cluster_a, mg.height) + "," + node(mg.cluster_b, mg.height) + "):" +
           detail::fmt_real(parent_height - mg.height);
  };
  const Merge& root = linkage.merges.back();
  return "(" + node(root.cluster_a, root.height) + "," + node(root.cluster_b, root.height) + ");";
}

inline nlohmann::ordered_json to_json(const Linkage& linkage, const std::vector<std::string>& labels) {
  nlohmann::ordered_json j;
  j["labels"] = labels;
  auto& merges = j["merges"] = nlohmann::ordered_json::array();
  for (const auto& mg : linkage.merges) {
    merges.push_back({{"cluster_a", mg.cluster_a}, {"cluster_b", mg.cluster_b}, {"height", mg.height}, {"size", mg.size}});
  }
  j["newick"] = to_newick(linkage, labels);
  return j;
}

}  // namespace repsim
