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

// Representational dissimilarity matrices in condensed upper-triangular form.
//
// RDM1 layout (little-endian):
//   offset 0  4 bytes  magic "RDM1"
//   offset 4  u32      N
//   offset 8  u8       metric code (1 = Euclidean, 2 = Pearson distance)
//   offset 9  N(N-1)/2 binary32 values, condensed row-major
// Item labels (manifest rows in RDM item order) live in "<path>.tsv".

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <mutex>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "repsim/embedding_store.hpp"
#include "repsim/errors.hpp"
#include "repsim/parallel.hpp"

namespace repsim {

enum class Metric : std::uint8_t { Euclidean = 1, PearsonDistance = 2 };

inline std::string_view metric_name(Metric m) {
  return m == Metric::Euclidean ? "euclidean" : "pearson";
}

inline Metric parse_metric(std::string_view name) {
  if (name == "euclidean") return Metric::Euclidean;
  if (name == "pearson" || name == "correlation") return Metric::PearsonDistance;
  throw ValidationError("unknown metric '" + std::string(name) + "' (expected euclidean|pearson)");
}

inline constexpr std::uint64_t condensed_size(std::uint64_t n) noexcept { return n * (n - 1) / 2; }

/// Flat position of pair (i, j), i < j < n, in the condensed vector.
inline std::uint64_t condensed_index(std::uint64_t i, std::uint64_t j, std::uint64_t n) {
  if (i >= j || j >= n) {
    throw IndexError("condensed_index requires 0 <= i < j < n (got i=" + std::to_string(i) +
                     ", j=" + std::to_string(j) + ", n=" + std::to_string(n) + ")");
  }
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

/// Condensed RDM over N items. `labels()` lists the manifest rows in item
/// order; each row's row_index points back into the source embedding set.
class Rdm {
 public:
  Rdm(Metric metric, std::vector<float> values, Manifest labels)
      : metric_(metric), values_(std::move(values)), labels_(std::move(labels)) {
    const std::uint64_t n = labels_.size();
    if (n < 2) throw ValidationError("RDM needs at least 2 items");
    if (values_.size() != condensed_size(n)) {
      throw ValidationError("RDM holds " + std::to_string(values_.size()) + " values, expected N(N-1)/2 = " +
                            std::to_string(condensed_size(n)));
    }
    for (std::size_t k = 0; k < values_.size(); ++k) {
      if (std::isnan(values_[k]) || values_[k] < 0.0f) {
        throw ValidationError("RDM value " + std::to_string(k) + " is negative or NaN");
      }
    }
  }

  std::size_t n_items() const noexcept { return labels_.size(); }
  Metric metric() const noexcept { return metric_; }
  std::span<const float> values() const noexcept { return values_; }
  const Manifest& labels() const noexcept { return labels_; }

  float at(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0f;
    if (i > j) std::swap(i, j);
    return values_[condensed_index(i, j, n_items())];
  }

 private:
  Metric metric_;
  std::vector<float> values_;
  Manifest labels_;
};

struct RdmOptions {
  /// Rows per panel; 0 picks a panel of roughly 1 MiB of float64 rows.
  std::size_t block_rows = 0;
  /// Called with (panels done, panels total) after each row panel; calls
  /// are serialised.
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Item order used for RDMs: manifest rows grouped by disease, then slide,
/// both in order of first appearance, otherwise keeping manifest order.
inline std::vector<std::size_t> grouped_item_order(const Manifest& manifest) {
  std::map<std::string_view, std::size_t> disease_rank, slide_rank;
  for (const auto& row : manifest.rows) {
    disease_rank.emplace(row.disease_label, disease_rank.size());
    slide_rank.emplace(row.slide_id, slide_rank.size());
  }
  std::vector<std::size_t> order(manifest.size());
  for (std::size_t r = 0; r < order.size(); ++r) order[r] = r;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ra = manifest.rows[a];
    const auto& rb = manifest.rows[b];
    const auto da = disease_rank[ra.disease_label], db = disease_rank[rb.disease_label];
    if (da != db) return da < db;
    return slide_rank[ra.slide_id] < slide_rank[rb.slide_id];
  });
  return order;
}

namespace detail {

// Sum of squared differences with a fixed reduction order: lane l
// accumulates the terms k = l (mod 8), then lanes are combined pairwise.
// The four-pair variant uses the same order per pair, so every entry is
// bit-identical however pairs are grouped.
inline constexpr std::size_t kLanes = 8;

inline double combine_lanes(const double* acc) noexcept {
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
}

inline double squared_difference(const double* a, const double* b, std::size_t d) noexcept {
  double acc[kLanes] = {};
  std::size_t k = 0;
  for (; k + kLanes <= d; k += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) {
      const double t = a[k + l] - b[k + l];
      acc[l] += t * t;
    }
  }
  for (std::size_t l = 0; k + l < d; ++l) {
    const double t = a[k + l] - b[k + l];
    acc[l] += t * t;
  }
  return combine_lanes(acc);
}

inline void squared_difference4(const double* a, const double* b0, const double* b1, const double* b2,
                                const double* b3, std::size_t d, double* out) noexcept {
  double acc[4][kLanes] = {};
  const double* b[4] = {b0, b1, b2, b3};
  std::size_t k = 0;
  for (; k + kLanes <= d; k += kLanes) {
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t l = 0; l < kLanes; ++l) {
        const double t = a[k + l] - b[r][k + l];
        acc[r][l] += t * t;
      }
    }
  }
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t l = 0; k + l < d; ++l) {
      const double t = a[k + l] - b[r][k + l];
      acc[r][l] += t * t;
    }
    out[r] = combine_lanes(acc[r]);
  }
}

}  // namespace detail

/// Pairwise distances between all embeddings of `set`.
///
/// Euclidean uses the difference form sqrt(sum (x_i - x_j)^2) with float64
/// accumulation. Pearson distance is 1 - r computed as |z_i - z_j|^2 / 2 on
/// per-row centred, unit-normalised rows, which is exactly zero for equal
/// rows. Work is split into row panels which may run in parallel; every
/// output entry is computed by one task so results do not depend on the
/// thread count.
inline Rdm compute_rdm(const EmbeddingSet& set, Metric metric, const RdmOptions& opts = {}) {
  const std::size_t n = set.n_items();
  const std::size_t d = set.dim();
  const std::vector<std::size_t> order = grouped_item_order(set.manifest());

  std::vector<double> rows(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = set.row(order[i]);
    double* dst = rows.data() + i * d;
    for (std::size_t k = 0; k < d; ++k) dst[k] = src[k];
    if (metric == Metric::PearsonDistance) {
      if (std::all_of(src.begin(), src.end(), [&](float v) { return v == src[0]; })) {
        throw DistanceError("Pearson distance undefined: row " + std::to_string(order[i]) +
                            " (patch " + set.manifest().rows[order[i]].patch_id + ") has zero variance");
      }
      double mean = 0.0;
      for (std::size_t k = 0; k < d; ++k) mean += dst[k];
      mean /= static_cast<double>(d);
      double norm2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        dst[k] -= mean;
        norm2 += dst[k] * dst[k];
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t k = 0; k < d; ++k) dst[k] *= inv;
    }
  }

  std::size_t block = opts.block_rows;
  if (block == 0) block = std::clamp<std::size_t>((std::size_t(1) << 20) / (8 * d), 8, 512);
  const std::size_t n_panels = (n + block - 1) / block;

  std::vector<float> values(condensed_size(n));
  std::mutex progress_mutex;
  std::size_t panels_done = 0;
  parallel_for(n_panels, [&](std::size_t panel) {
    const std::size_t i0 = panel * block, i1 = std::min(n, i0 + block);
    for (std::size_t j0 = i0; j0 < n; j0 += block) {
      const std::size_t j1 = std::min(n, j0 + block);
      for (std::size_t i = i0; i < i1; ++i) {
        const double* xi = rows.data() + i * d;
        const std::size_t base = i * n - i * (i + 1) / 2 - i - 1;
        auto store = [&](std::size_t j, double s) {
          values[base + j] = metric == Metric::Euclidean
                                 ? static_cast<float>(std::sqrt(s))
                                 : static_cast<float>(std::clamp(0.5 * s, 0.0, 2.0));
        };
        std::size_t j = std::max(j0, i + 1);
        for (; j + 4 <= j1; j += 4) {
          double s[4];
          const double* xj = rows.data() + j * d;
          detail::squared_difference4(xi, xj, xj + d, xj + 2 * d, xj + 3 * d, d, s);
          for (std::size_t r = 0; r < 4; ++r) store(j + r, s[r]);
        }
        for (; j < j1; ++j) store(j, detail::squared_difference(xi, rows.data() + j * d, d));
      }
    }
    if (opts.progress) {
      std::lock_guard lock(progress_mutex);
      opts.progress(++panels_done, n_panels);
    }
  });

  Manifest labels;
  labels.rows.reserve(n);
  for (std::size_t i = 0; i < n; ++i) labels.rows.push_back(set.manifest().rows[order[i]]);
  return Rdm(metric, std::move(values), std::move(labels));
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr std::size_t kRdmHeaderBytes = 9;

inline std::string encode_rdm1(const Rdm& rdm) {
  std::string out;
  out.reserve(kRdmHeaderBytes + rdm.values().size() * 4);
  out += "RDM1";
  detail::put_u32_le(out, static_cast<std::uint32_t>(rdm.n_items()));
  out.push_back(static_cast<char>(rdm.metric()));
  for (float v : rdm.values()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline void write_rdm(const Rdm& rdm, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_rdm1(rdm));
  write_manifest(rdm.labels(), manifest_path_for(path));
}

inline Rdm decode_rdm1(std::string_view bytes, Manifest labels) {
  if (bytes.size() < kRdmHeaderBytes) {
    throw FormatError("truncated header: expected " + std::to_string(kRdmHeaderBytes) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (bytes.substr(0, 4) != "RDM1") throw FormatError("bad magic at byte offset 0 (expected RDM1)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t n = detail::get_u32_le(p + 4);
  const std::uint8_t code = p[8];
  if (code != 1 && code != 2) throw FormatError("unknown metric code " + std::to_string(code) + " at byte offset 8");
  const std::uint64_t expected = kRdmHeaderBytes + condensed_size(n) * 4;
  if (n < 2 || bytes.size() != expected) {
    throw FormatError("payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  if (labels.size() != n) {
    throw FormatError("manifest rows " + std::to_string(labels.size()) + " ≠ N " + std::to_string(n));
  }
  std::vector<float> values(condensed_size(n));
  for (std::size_t k = 0; k < values.size(); ++k) {
    values[k] = std::bit_cast<float>(detail::get_u32_le(p + kRdmHeaderBytes + 4 * k));
  }
  return Rdm(static_cast<Metric>(code), std::move(values), std::move(labels));
}

inline Rdm read_rdm(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 4 && bytes.substr(0, 4) != "RDM1") {
    throw FormatError(path.string() + ": bad magic at byte offset 0 (expected RDM1)");
  }
  return decode_rdm1(bytes, read_manifest(manifest_path_for(path)));
}

// ---------------------------------------------------------------------------
// Rendering

/// Full symmetric N x N image of an RDM scaled into [0, 1] by its maximum.
struct RenderedRdm {
  std::size_t n_items = 0;
  std::vector<float> pixels;  // row-major N x N

  float at(std::size_t i, std::size_t j) const { return pixels[i * n_items + j]; }
};

inline RenderedRdm normalize_rdm_unit(const Rdm& rdm) {
  const std::size_t n = rdm.n_items();
  const auto values = rdm.values();
  const float max_value = *std::max_element(values.begin(), values.end());
  RenderedRdm out{n, std::vector<float>(n * n, 0.0f)};
  if (max_value == 0.0f) return out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      const auto p = static_cast<float>(static_cast<double>(values[k]) / max_value);
      out.pixels[i * n + j] = p;
      out.pixels[j * n + i] = p;
    }
  }
  return out;
}

/// Binary 8-bit PGM (P5); pixel p maps to floor(255 p + 0.5).
inline std::string encode_pgm(const RenderedRdm& img) {
  std::string out = "P5\n" + std::to_string(img.n_items) + " " + std::to_string(img.n_items) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float p : img.pixels) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::floor(255.0 * p + 0.5))));
  }
  return out;
}

}  // namespace repsim
