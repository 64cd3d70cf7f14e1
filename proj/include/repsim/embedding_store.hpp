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

// Embedding sets on disk and the slide-level batch planner.
//
// EMB1 layout (all integers little-endian, independent of host):
//   offset 0   4 bytes  magic "EMB1"
//   offset 4   u32      N (rows)
//   offset 8   u32      d (columns)
//   offset 12  u8       dtype code, 1 = IEEE-754 binary32
//   offset 13  N*d*4    row-major values
// The manifest lives next to it as "<path>.tsv".

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "json.hpp"
#include "repsim/errors.hpp"
#include "repsim/hash.hpp"
#include "repsim/random.hpp"

namespace repsim {

struct ManifestRow {
  std::uint64_t row_index = 0;
  std::string patch_id;
  std::string slide_id;
  std::string disease_label;
  std::string model_id;
  std::uint64_t batch_id = 0;
  std::int64_t x = 0;
  std::int64_t y = 0;

  bool operator==(const ManifestRow&) const = default;
};

struct Manifest {
  std::vector<ManifestRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  bool operator==(const Manifest&) const = default;
};

inline constexpr std::string_view kManifestHeader =
    "row_index\tpatch_id\tslide_id\tdisease_label\tmodel_id\tbatch_id\tx\ty";

/// Checks the manifest invariants: row_index is a permutation of 0..N-1,
/// (slide_id, patch_id) pairs are unique and each slide has one disease.
inline void validate_manifest(const Manifest& manifest) {
  const std::size_t n = manifest.size();
  std::vector<char> seen(n, 0);
  std::set<std::pair<std::string_view, std::string_view>> patches;
  std::map<std::string_view, std::string_view> slide_disease;
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = manifest.rows[r];
    if (row.row_index >= n || seen[row.row_index]) {
      throw ValidationError("manifest row " + std::to_string(r) + ": row_index " +
                            std::to_string(row.row_index) +
                            " is out of range or repeated");
    }
    seen[row.row_index] = 1;
    if (!patches.emplace(row.slide_id, row.patch_id).second) {
      throw ValidationError("manifest row " + std::to_string(r) +
                            ": duplicate (slide_id, patch_id) = (" + row.slide_id +
                            ", " + row.patch_id + ")");
    }
    auto [it, inserted] = slide_disease.emplace(row.slide_id, row.disease_label);
    if (!inserted && it->second != row.disease_label) {
      throw ValidationError("manifest row " + std::to_string(r) + ": slide " +
                            row.slide_id + " labelled both " + std::string(it->second) +
                            " and " + row.disease_label);
    }
  }
}

/// Hash of the item identity sequence (slide_id, patch_id) in row order.
/// Model ids are excluded so that RDMs of different models over the same
/// patches hash equal.
inline std::string item_order_hash(const Manifest& manifest) {
  Fnv1a64 h;
  for (const auto& row : manifest.rows) {
    h.update(row.slide_id).update("\t").update(row.patch_id).update("\n");
  }
  return h.hex();
}

namespace detail {

inline void check_tsv_field(const std::string& field, std::size_t row) {
  if (field.find_first_of("\t\r\n") != std::string::npos) {
    throw ValidationError("manifest row " + std::to_string(row) +
                          ": field contains a tab or newline");
  }
}

template <typename Int>
Int parse_int_field(const std::string& text, std::size_t line, const char* column) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    if constexpr (std::is_unsigned_v<Int>) {
      if (v < 0) throw std::out_of_range(text);
    }
    return static_cast<Int>(v);
  } catch (const std::exception&) {
    throw FormatError("manifest line " + std::to_string(line) + ": column " + column +
                      " is not an integer: '" + text + "'");
  }
}

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline std::string format_manifest_tsv(const Manifest& manifest) {
  std::string out(kManifestHeader);
  out.push_back('\n');
  for (std::size_t r = 0; r < manifest.size(); ++r) {
    const auto& row = manifest.rows[r];
    for (const auto* f : {&row.patch_id, &row.slide_id, &row.disease_label, &row.model_id}) {
      detail::check_tsv_field(*f, r);
    }
    out += std::to_string(row.row_index) + '\t' + row.patch_id + '\t' + row.slide_id +
           '\t' + row.disease_label + '\t' + row.model_id + '\t' +
           std::to_string(row.batch_id) + '\t' + std::to_string(row.x) + '\t' +
           std::to_string(row.y) + '\n';
  }
  return out;
}

inline Manifest parse_manifest_tsv(std::string_view text) {
  Manifest manifest;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kManifestHeader) {
        throw FormatError("manifest line 1: unexpected header '" + std::string(line) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const std::size_t tab = line.find('\t', start);
      cols.emplace_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 8) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 8 columns, got " +
                        std::to_string(cols.size()));
    }
    ManifestRow row;
    row.row_index = detail::parse_int_field<std::uint64_t>(cols[0], line_no, "row_index");
    row.patch_id = std::move(cols[1]);
    row.slide_id = std::move(cols[2]);
    row.disease_label = std::move(cols[3]);
    row.model_id = std::move(cols[4]);
    row.batch_id = detail::parse_int_field<std::uint64_t>(cols[5], line_no, "batch_id");
    row.x = detail::parse_int_field<std::int64_t>(cols[6], line_no, "x");
    row.y = detail::parse_int_field<std::int64_t>(cols[7], line_no, "y");
    manifest.rows.push_back(std::move(row));
  }
  if (!header_seen) throw FormatError("manifest is empty (missing header)");
  return manifest;
}

inline std::filesystem::path manifest_path_for(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".tsv");
}

inline void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  detail::write_file_bytes(path, format_manifest_tsv(manifest));
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  return parse_manifest_tsv(detail::read_file_bytes(path));
}

/// N x d float32 embeddings bound row-by-row to a manifest. Immutable once
/// constructed; every instance satisfies the set invariants.
class EmbeddingSet {
 public:
  EmbeddingSet(std::size_t n_items, std::size_t dim, std::vector<float> data, Manifest manifest)
      : n_items_(n_items), dim_(dim), data_(std::move(data)), manifest_(std::move(manifest)) {
    if (n_items_ < 2) {
      throw ValidationError("N ≥ 2 required (got N = " + std::to_string(n_items_) + ")");
    }
    if (dim_ == 0) throw ValidationError("d > 0 required");
    if (n_items_ > 0xffffffffULL || dim_ > 0xffffffffULL) {
      throw ValidationError("N and d must fit in 32 bits");
    }
    if (data_.size() != n_items_ * dim_) {
      throw ValidationError("data holds " + std::to_string(data_.size()) + " values, expected N*d = " +
                            std::to_string(n_items_ * dim_));
    }
    if (manifest_.size() != n_items_) {
      throw ValidationError("manifest rows " + std::to_string(manifest_.size()) + " ≠ N " +
                            std::to_string(n_items_));
    }
    for (std::size_t k = 0; k < data_.size(); ++k) {
      if (!std::isfinite(data_[k])) {
        throw ValidationError("non-finite value at row " + std::to_string(k / dim_) + ", column " +
                              std::to_string(k % dim_));
      }
    }
    validate_manifest(manifest_);
  }

  std::size_t n_items() const noexcept { return n_items_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<const float> row(std::size_t i) const noexcept {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
  }
  const Manifest& manifest() const noexcept { return manifest_; }

  bool operator==(const EmbeddingSet& other) const {
    if (n_items_ != other.n_items_ || dim_ != other.dim_ || manifest_ != other.manifest_) return false;
    // Bitwise, so that -0.0 and +0.0 are distinguished.
    for (std::size_t k = 0; k < data_.size(); ++k) {
      if (std::bit_cast<std::uint32_t>(data_[k]) != std::bit_cast<std::uint32_t>(other.data_[k])) {
        return false;
      }
    }
    return true;
  }

 private:
  std::size_t n_items_;
  std::size_t dim_;
  std::vector<float> data_;
  Manifest manifest_;
};

inline constexpr std::size_t kEmbHeaderBytes = 13;
inline constexpr std::uint8_t kDtypeFloat32 = 1;

inline std::string encode_emb1(const EmbeddingSet& set) {
  std::string out;
  out.reserve(kEmbHeaderBytes + set.data().size() * 4);
  out += "EMB1";
  detail::put_u32_le(out, static_cast<std::uint32_t>(set.n_items()));
  detail::put_u32_le(out, static_cast<std::uint32_t>(set.dim()));
  out.push_back(static_cast<char>(kDtypeFloat32));
  for (float v : set.data()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Writes the EMB1 file and its sibling manifest.
inline void write_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_emb1(set));
  write_manifest(set.manifest(), manifest_path_for(path));
}

struct Emb1Header {
  std::uint32_t n_items = 0;
  std::uint32_t dim = 0;
};

inline Emb1Header parse_emb1_header(std::string_view bytes) {
  if (bytes.size() < kEmbHeaderBytes) {
    throw FormatError("truncated header: expected " + std::to_string(kEmbHeaderBytes) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  if (bytes.substr(0, 4) != "EMB1") throw FormatError("bad magic at byte offset 0 (expected EMB1)");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Emb1Header h{detail::get_u32_le(p + 4), detail::get_u32_le(p + 8)};
  if (p[12] != kDtypeFloat32) {
    throw FormatError("unknown dtype code " + std::to_string(p[12]) + " at byte offset 12");
  }
  return h;
}

/// Decodes EMB1 bytes plus an already-parsed manifest.
inline EmbeddingSet decode_emb1(std::string_view bytes, Manifest manifest) {
  const Emb1Header h = parse_emb1_header(bytes);
  const std::uint64_t expected = kEmbHeaderBytes + std::uint64_t(h.n_items) * h.dim * 4;
  if (bytes.size() != expected) {
    throw FormatError("payload size mismatch: expected " + std::to_string(expected) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  if (manifest.size() != h.n_items) {
    throw FormatError("manifest rows " + std::to_string(manifest.size()) + " ≠ N " +
                      std::to_string(h.n_items));
  }
  std::vector<float> data(std::size_t(h.n_items) * h.dim);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kEmbHeaderBytes;
  for (std::size_t k = 0; k < data.size(); ++k) {
    data[k] = std::bit_cast<float>(detail::get_u32_le(p + 4 * k));
  }
  return EmbeddingSet(h.n_items, h.dim, std::move(data), std::move(manifest));
}

inline EmbeddingSet read_embedding_set(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  parse_emb1_header(bytes);
  return decode_emb1(bytes, read_manifest(manifest_path_for(path)));
}

/// Streams rows of an EMB1 file without loading the whole payload.
class EmbeddingReader {
 public:
  explicit EmbeddingReader(const std::filesystem::path& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open " + path.string());
    std::string header(kEmbHeaderBytes, '\0');
    in_.read(header.data(), kEmbHeaderBytes);
    header.resize(static_cast<std::size_t>(in_.gcount()));
    header_ = parse_emb1_header(header);
    const auto size = std::filesystem::file_size(path);
    const std::uint64_t expected = kEmbHeaderBytes + std::uint64_t(header_.n_items) * header_.dim * 4;
    if (size != expected) {
      throw FormatError("payload size mismatch: expected " + std::to_string(expected) +
                        " bytes, got " + std::to_string(size));
    }
  }

  std::size_t n_items() const noexcept { return header_.n_items; }
  std::size_t dim() const noexcept { return header_.dim; }

  /// Reads rows [first, first + count) into out (resized to count * dim).
  void read_rows(std::size_t first, std::size_t count, std::vector<float>& out) {
    out.resize(count * header_.dim);
    std::vector<unsigned char> raw(out.size() * 4);
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(kEmbHeaderBytes + first * header_.dim * 4));
    in_.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in_.gcount()) != raw.size()) {
      throw IoError("short read in " + path_.string());
    }
    for (std::size_t k = 0; k < out.size(); ++k) {
      out[k] = std::bit_cast<float>(detail::get_u32_le(raw.data() + 4 * k));
      if (!std::isfinite(out[k])) {
        throw ValidationError("non-finite value at row " + std::to_string(first + k / header_.dim));
      }
    }
  }

 private:
  std::ifstream in_;
  std::filesystem::path path_;
  Emb1Header header_;
};

// ---------------------------------------------------------------------------
// Batch planning

struct BatchPlanConfig {
  std::size_t n_batches = 5;
  std::size_t wsis_per_disease_per_batch = 50;
  std::size_t patches_per_wsi = 50;
  std::uint64_t seed = 0;

  bool operator==(const BatchPlanConfig&) const = default;
};

struct BatchPlan {
  BatchPlanConfig config;
  /// assignments[batch][disease] -> slide ids, in draw order.
  std::vector<std::map<std::string, std::vector<std::string>>> assignments;

  bool operator==(const BatchPlan&) const = default;
};

/// Splits slides into disjoint batches, per disease, by seeded sampling
/// without replacement. Diseases are visited in lexicographic order and
/// each disease's slides are taken in lexicographic order before shuffling,
/// so the plan depends only on the set of (slide, disease) pairs and cfg.
inline BatchPlan plan_batches(const Manifest& manifest, const BatchPlanConfig& cfg) {
  if (cfg.n_batches == 0 || cfg.wsis_per_disease_per_batch == 0) {
    throw ValidationError("n_batches and wsis_per_disease_per_batch must be positive");
  }
  std::map<std::string, std::set<std::string>> slides_by_disease;
  for (const auto& row : manifest.rows) slides_by_disease[row.disease_label].insert(row.slide_id);

  const std::size_t needed = cfg.n_batches * cfg.wsis_per_disease_per_batch;
  std::string shortfall;
  for (const auto& [disease, slides] : slides_by_disease) {
    if (slides.size() < needed) {
      shortfall += (shortfall.empty() ? "" : "; ") + disease + ": " + std::to_string(slides.size()) +
                   " slides < " + std::to_string(needed) + " required";
    }
  }
  if (!shortfall.empty()) throw CapacityError("insufficient slides per disease: " + shortfall);

  BatchPlan plan{cfg, std::vector<std::map<std::string, std::vector<std::string>>>(cfg.n_batches)};
  Rng rng(cfg.seed);
  for (const auto& [disease, slide_set] : slides_by_disease) {
    std::vector<std::string> slides(slide_set.begin(), slide_set.end());
    // Partial Fisher-Yates: the first `needed` positions become the sample.
    for (std::size_t i = 0; i < needed; ++i) {
      const std::size_t j = i + rng.uniform_below(slides.size() - i);
      std::swap(slides[i], slides[j]);
    }
    for (std::size_t b = 0; b < cfg.n_batches; ++b) {
      auto first = slides.begin() + static_cast<std::ptrdiff_t>(b * cfg.wsis_per_disease_per_batch);
      plan.assignments[b][disease].assign(first, first + static_cast<std::ptrdiff_t>(cfg.wsis_per_disease_per_batch));
    }
  }
  return plan;
}

/// Manifest row positions belonging to one batch, ordered by disease, then
/// slide (plan order), then manifest position. At most patches_per_wsi rows
/// are kept per slide; when a slide has more, a seeded subset is drawn.
inline std::vector<std::size_t> batch_rows(const Manifest& manifest, const BatchPlan& plan, std::size_t batch) {
  if (batch >= plan.assignments.size()) {
    throw IndexError("batch " + std::to_string(batch) + " out of range");
  }
  std::map<std::string, std::vector<std::size_t>> rows_by_slide;
  for (std::size_t r = 0; r < manifest.size(); ++r) rows_by_slide[manifest.rows[r].slide_id].push_back(r);

  Rng rng(plan.config.seed ^ (0x9e3779b97f4a7c15ULL * (batch + 1)));
  std::vector<std::size_t> out;
  for (const auto& [disease, slides] : plan.assignments[batch]) {
    for (const auto& slide : slides) {
      std::vector<std::size_t> rows = rows_by_slide[slide];
      if (plan.config.patches_per_wsi > 0 && rows.size() > plan.config.patches_per_wsi) {
        for (std::size_t i = 0; i < plan.config.patches_per_wsi; ++i) {
          std::swap(rows[i], rows[i + rng.uniform_below(rows.size() - i)]);
        }
        rows.resize(plan.config.patches_per_wsi);
        std::sort(rows.begin(), rows.end());
      }
      out.insert(out.end(), rows.begin(), rows.end());
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const BatchPlan& plan) {
  nlohmann::ordered_json j;
  j["n_batches"] = plan.config.n_batches;
  j["wsis_per_disease_per_batch"] = plan.config.wsis_per_disease_per_batch;
  j["patches_per_wsi"] = plan.config.patches_per_wsi;
  j["seed"] = plan.config.seed;
  auto& batches = j["batches"] = nlohmann::ordered_json::array();
  for (std::size_t b = 0; b < plan.assignments.size(); ++b) {
    nlohmann::ordered_json entry;
    entry["batch_id"] = b;
    for (const auto& [disease, slides] : plan.assignments[b]) entry["slides"][disease] = slides;
    batches.push_back(std::move(entry));
  }
  return j;
}

}  // namespace repsim
