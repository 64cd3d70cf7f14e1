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

// Slide and disease specificity: Cliff's delta between inter-group and
// intra-group distance distributions of an RDM.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "repsim/errors.hpp"
#include "repsim/radix_sort.hpp"
#include "repsim/rdm.hpp"

namespace repsim {

enum class GroupingKind { Slide, Disease };

inline std::string_view grouping_name(GroupingKind k) { return k == GroupingKind::Slide ? "slide" : "disease"; }

struct GroupingSpec {
  GroupingKind kind = GroupingKind::Slide;
  /// Drops same-slide pairs from the intra set. Forced on for Disease and
  /// meaningless for Slide.
  bool exclude_same_slide_for_intra = false;
  /// Slide grouping only: restrict inter pairs to different slides of the
  /// same disease instead of all different-slide pairs.
  bool inter_within_disease_only = false;

  static GroupingSpec slide() { return {GroupingKind::Slide, false, false}; }
  static GroupingSpec disease() { return {GroupingKind::Disease, true, false}; }
};

struct DistanceSplit {
  std::vector<float> intra;
  std::vector<float> inter;
};

namespace detail {

enum class PairClass : std::uint8_t { Intra, Inter, Excluded };

struct ItemGroups {
  std::vector<std::uint32_t> slide, disease;
};

inline ItemGroups item_groups(const Manifest& labels) {
  ItemGroups g;
  std::unordered_map<std::string, std::uint32_t> slide_ids, disease_ids;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& row = labels.rows[i];
    if (row.slide_id.empty() || row.disease_label.empty()) {
      throw LabelingError("item " + std::to_string(i) + " (patch '" + row.patch_id +
                          "') is missing a slide_id or disease_label");
    }
    g.slide.push_back(slide_ids.emplace(row.slide_id, static_cast<std::uint32_t>(slide_ids.size())).first->second);
    g.disease.push_back(
        disease_ids.emplace(row.disease_label, static_cast<std::uint32_t>(disease_ids.size())).first->second);
  }
  return g;
}

inline PairClass classify(const ItemGroups& g, const GroupingSpec& spec, std::size_t i, std::size_t j) {
  const bool same_slide = g.slide[i] == g.slide[j];
  const bool same_disease = g.disease[i] == g.disease[j];
  if (spec.kind == GroupingKind::Slide) {
    if (same_slide) return PairClass::Intra;
    if (spec.inter_within_disease_only && !same_disease) return PairClass::Excluded;
    return PairClass::Inter;
  }
  if (same_slide) return PairClass::Excluded;
  return same_disease ? PairClass::Intra : PairClass::Inter;
}

template <typename Visit>
void for_each_pair_class(const Rdm& rdm, const ItemGroups& g, const GroupingSpec& spec, Visit&& visit) {
  const std::size_t n = rdm.n_items();
  const auto values = rdm.values();
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) visit(classify(g, spec, i, j), values[k]);
  }
}

}  // namespace detail

/// Partitions the condensed entries of `rdm` into intra-group and
/// inter-group distances.
///
///  Slide:   intra = same slide; inter = different slide (optionally only
///           within the same disease).
///  Disease: intra = same disease, different slide; inter = different
///           disease; same-slide pairs are dropped.
inline DistanceSplit split_distances(const Rdm& rdm, GroupingSpec spec) {
  if (spec.kind == GroupingKind::Disease) spec.exclude_same_slide_for_intra = true;
  const auto groups = detail::item_groups(rdm.labels());
  std::size_t n_intra = 0, n_inter = 0;
  detail::for_each_pair_class(rdm, groups, spec, [&](detail::PairClass c, float) {
    n_intra += c == detail::PairClass::Intra;
    n_inter += c == detail::PairClass::Inter;
  });
  DistanceSplit out;
  out.intra.reserve(n_intra);
  out.inter.reserve(n_inter);
  detail::for_each_pair_class(rdm, groups, spec, [&](detail::PairClass c, float v) {
    if (c == detail::PairClass::Intra) out.intra.push_back(v);
    else if (c == detail::PairClass::Inter) out.inter.push_back(v);
  });
  return out;
}

struct CliffsDelta {
  double delta = 0.0;
  std::uint64_t n_greater = 0;  // #{(a, b) : a > b}
  std::uint64_t n_less = 0;     // #{(a, b) : a < b}
  std::uint64_t n_x = 0;
  std::uint64_t n_y = 0;

  /// Exact numerator #greater - #less.
  __int128 numerator() const { return static_cast<__int128>(n_greater) - static_cast<__int128>(n_less); }
};

/// Cliff's delta of x against y, exact: both sides are radix-sorted and
/// dominance counts accumulated over runs of tied values.
inline CliffsDelta cliffs_delta(std::span<const float> x, std::span<const float> y) {
  if (x.empty() || y.empty()) {
    throw EmptyGroupError(std::string("Cliff's delta needs two nonempty groups (") + (x.empty() ? "x" : "y") +
                          " is empty)");
  }
  for (auto side : {x, y}) {
    for (float v : side) {
      if (std::isnan(v)) throw ValidationError("NaN in Cliff's delta input");
    }
  }
  const std::vector<std::uint32_t> kx = sorted_float_keys(x);
  const std::vector<std::uint32_t> ky = sorted_float_keys(y);
  const std::size_t nx = kx.size(), ny = ky.size();
  unsigned __int128 greater = 0, less = 0;
  std::size_t below = 0;     // #y < current x value
  std::size_t at_most = 0;   // #y <= current x value
  for (std::size_t start = 0; start < nx;) {
    const std::uint32_t v = kx[start];
    std::size_t end = start + 1;
    while (end < nx && kx[end] == v) ++end;
    while (below < ny && ky[below] < v) ++below;
    at_most = std::max(at_most, below);
    while (at_most < ny && ky[at_most] == v) ++at_most;
    const auto run = static_cast<unsigned __int128>(end - start);
    greater += run * below;
    less += run * (ny - at_most);
    start = end;
  }
  CliffsDelta out;
  out.n_greater = static_cast<std::uint64_t>(greater);
  out.n_less = static_cast<std::uint64_t>(less);
  out.n_x = nx;
  out.n_y = ny;
  const auto num = static_cast<long double>(static_cast<__int128>(greater) - static_cast<__int128>(less));
  const auto den = static_cast<long double>(nx) * static_cast<long double>(ny);
  out.delta = static_cast<double>(num / den);
  return out;
}

/// Vargha-Delaney style magnitude label for |delta|.
inline std::string_view effect_size_label(double delta) {
  const double a = std::fabs(delta);
  if (a >= 0.43) return "large";
  if (a >= 0.28) return "medium";
  if (a >= 0.11) return "weak";
  return "negligible";
}

struct BatchDelta {
  std::uint64_t batch_id = 0;
  double delta = 0.0;
  std::uint64_t n_intra = 0;
  std::uint64_t n_inter = 0;
  std::uint64_t n_greater = 0;
  std::uint64_t n_less = 0;
};

/// Specificity across batches. Sign convention: x = inter, y = intra, so a
/// positive delta means inter-group distances exceed intra-group ones.
struct CliffsResult {
  GroupingSpec grouping;
  std::vector<BatchDelta> per_batch;
  double delta = 0.0;  // mean over batches
  double range_lo = 0.0;
  double range_hi = 0.0;

  std::string_view label() const { return effect_size_label(delta); }
};

inline BatchDelta batch_specificity(const Rdm& rdm, const GroupingSpec& grouping, std::uint64_t batch_id = 0) {
  const DistanceSplit split = split_distances(rdm, grouping);
  const CliffsDelta cd = cliffs_delta(split.inter, split.intra);
  return {batch_id, cd.delta, split.intra.size(), split.inter.size(), cd.n_greater, cd.n_less};
}

inline CliffsResult specificity_report(const std::vector<std::uint64_t>& batch_ids,
                                       const std::function<Rdm(std::uint64_t)>& load, const GroupingSpec& grouping) {
  if (batch_ids.empty()) throw CompletenessError("specificity needs at least one batch");
  CliffsResult out;
  out.grouping = grouping;
  if (grouping.kind == GroupingKind::Disease) out.grouping.exclude_same_slide_for_intra = true;
  out.range_lo = std::numeric_limits<double>::infinity();
  out.range_hi = -std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (auto b : batch_ids) {
    out.per_batch.push_back(batch_specificity(load(b), grouping, b));
    const double d = out.per_batch.back().delta;
    sum += d;
    out.range_lo = std::min(out.range_lo, d);
    out.range_hi = std::max(out.range_hi, d);
  }
  out.delta = std::clamp(sum / static_cast<double>(batch_ids.size()), out.range_lo, out.range_hi);
  return out;
}

inline CliffsResult specificity_report(const std::map<std::uint64_t, Rdm>& rdms, const GroupingSpec& grouping) {
  std::vector<std::uint64_t> ids;
  for (const auto& [b, rdm] : rdms) ids.push_back(b);
  return specificity_report(ids, [&](std::uint64_t b) { return rdms.at(b); }, grouping);
}

inline std::string specificity_csv_header() {
  return "model,grouping,mean_delta,range_lo,range_hi,n_batches,n_intra_total,n_inter_total,effect_size\n";
}

inline std::string specificity_csv_row(const std::string& model, const CliffsResult& r) {
  std::uint64_t n_intra = 0, n_inter = 0;
  for (const auto& b : r.per_batch) {
    n_intra += b.n_intra;
    n_inter += b.n_inter;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g", r.delta, r.range_lo, r.range_hi);
  return model + ',' + std::string(grouping_name(r.grouping.kind)) + ',' + buf + ',' +
         std::to_string(r.per_batch.size()) + ',' + std::to_string(n_intra) + ',' + std::to_string(n_inter) + ',' +
         std::string(r.label()) + '\n';
}

inline nlohmann::ordered_json to_json(const CliffsResult& r) {
  nlohmann::ordered_json j;
  j["grouping"] = grouping_name(r.grouping.kind);
  j["exclude_same_slide_for_intra"] = r.grouping.exclude_same_slide_for_intra;
  j["inter_within_disease_only"] = r.grouping.inter_within_disease_only;
  j["delta"] = r.delta;
  j["range"] = {r.range_lo, r.range_hi};
  j["effect_size"] = r.label();
  auto& batches = j["per_batch"] = nlohmann::ordered_json::array();
  for (const auto& b : r.per_batch) {
    batches.push_back({{"batch_id", b.batch_id},
                       {"delta", b.delta},
                       {"n_intra", b.n_intra},
                       {"n_inter", b.n_inter},
                       {"n_greater", b.n_greater},
                       {"n_less", b.n_less}});
  }
  return j;
}

}  // namespace repsim
