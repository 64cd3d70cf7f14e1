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

// Synthetic embedding sets with planted disease / slide effects, and
// brute-force reference implementations of the rank statistics.
//
// The oracles here deliberately share no code with the fast paths in
// rsa_compare.hpp and specificity.hpp.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "repsim/embedding_store.hpp"
#include "repsim/errors.hpp"
#include "repsim/random.hpp"

namespace repsim {

struct SynthConfig {
  std::size_t n_diseases = 4;
  std::size_t slides_per_disease = 50;
  std::size_t patches_per_slide = 50;
  std::size_t dim = 64;
  double sigma_disease = 0.0;
  double sigma_slide = 1.0;
  double sigma_noise = 1.0;
  std::uint64_t seed = 0;
  std::string model_id = "synthetic";
  std::uint64_t batch_id = 0;

  std::size_t n_items() const { return n_diseases * slides_per_disease * patches_per_slide; }
};

inline void validate(const SynthConfig& cfg) {
  if (cfg.n_diseases < 1 || cfg.slides_per_disease < 1 || cfg.patches_per_slide < 1 || cfg.dim < 1) {
    throw ValidationError("synthetic config: all counts must be >= 1");
  }
  for (double s : {cfg.sigma_disease, cfg.sigma_slide, cfg.sigma_noise}) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ValidationError("synthetic config: sigmas must be finite and >= 0");
  }
  if (cfg.sigma_disease == 0.0 && cfg.sigma_slide == 0.0 && cfg.sigma_noise == 0.0) {
    throw ValidationError("synthetic config: at least one sigma must be > 0");
  }
  if (cfg.n_items() < 2) throw ValidationError("synthetic config: N >= 2 required");
}

/// embedding(patch p of slide s of disease c) =
///   sigma_disease g_c + sigma_slide g_s + sigma_noise g_p
/// with standard-normal d-vectors drawn in the order: all disease vectors,
/// all slide vectors, all patch vectors. Every vector is drawn even when its
/// sigma is zero, so configs differing only in sigmas share the same g's.
inline EmbeddingSet generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  const std::size_t d = cfg.dim;
  const std::size_t n_slides = cfg.n_diseases * cfg.slides_per_disease;
  const std::size_t n = cfg.n_items();
  Rng rng(cfg.seed);
  auto draw = [&](std::size_t count) {
    std::vector<double> v(count * d);
    for (auto& x : v) x = rng.normal();
    return v;
  };
  const std::vector<double> g_disease = draw(cfg.n_diseases);
  const std::vector<double> g_slide = draw(n_slides);
  const std::vector<double> g_patch = draw(n);

  std::vector<float> data(n * d);
  Manifest manifest;
  manifest.rows.reserve(n);
  std::size_t item = 0;
  char buf[64];
  for (std::size_t c = 0; c < cfg.n_diseases; ++c) {
    for (std::size_t s = 0; s < cfg.slides_per_disease; ++s) {
      const std::size_t slide = c * cfg.slides_per_disease + s;
      for (std::size_t p = 0; p < cfg.patches_per_slide; ++p, ++item) {
        for (std::size_t k = 0; k < d; ++k) {
          data[item * d + k] = static_cast<float>(cfg.sigma_disease * g_disease[c * d + k] +
                                                  cfg.sigma_slide * g_slide[slide * d + k] +
                                                  cfg.sigma_noise * g_patch[item * d + k]);
        }
        ManifestRow row;
        row.row_index = item;
        std::snprintf(buf, sizeof buf, "p%04zu", p);
        row.patch_id = buf;
        std::snprintf(buf, sizeof buf, "D%zu-S%04zu", c, s);
        row.slide_id = buf;
        std::snprintf(buf, sizeof buf, "D%zu", c);
        row.disease_label = buf;
        row.model_id = cfg.model_id;
        row.batch_id = cfg.batch_id;
        row.x = static_cast<std::int64_t>((p % 16) * 224);
        row.y = static_cast<std::int64_t>((p / 16) * 224);
        manifest.rows.push_back(std::move(row));
      }
    }
  }
  return EmbeddingSet(n, d, std::move(data), std::move(manifest));
}

inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  try {
    cfg.n_diseases = j.value("n_diseases", cfg.n_diseases);
    cfg.slides_per_disease = j.value("slides_per_disease", cfg.slides_per_disease);
    cfg.patches_per_slide = j.value("patches_per_slide", cfg.patches_per_slide);
    cfg.dim = j.value("dim", cfg.dim);
    cfg.sigma_disease = j.value("sigma_disease", cfg.sigma_disease);
    cfg.sigma_slide = j.value("sigma_slide", cfg.sigma_slide);
    cfg.sigma_noise = j.value("sigma_noise", cfg.sigma_noise);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.model_id = j.value("model_id", cfg.model_id);
    cfg.batch_id = j.value("batch_id", cfg.batch_id);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("synthetic config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

inline nlohmann::ordered_json to_json(const SynthConfig& cfg) {
  return {{"n_diseases", cfg.n_diseases},       {"slides_per_disease", cfg.slides_per_disease},
          {"patches_per_slide", cfg.patches_per_slide}, {"dim", cfg.dim},
          {"sigma_disease", cfg.sigma_disease}, {"sigma_slide", cfg.sigma_slide},
          {"sigma_noise", cfg.sigma_noise},     {"seed", cfg.seed},
          {"model_id", cfg.model_id},           {"batch_id", cfg.batch_id}};
}

// ---------------------------------------------------------------------------
// Oracles

struct BruteCliffs {
  std::int64_t numerator = 0;  // #(a > b) - #(a < b)
  std::uint64_t n_x = 0;
  std::uint64_t n_y = 0;
  double delta = 0.0;
};

inline constexpr std::uint64_t kCliffsOracleMaxPairs = 10'000'000;

/// O(|x| |y|) dominance count.
template <typename T>
BruteCliffs cliffs_delta_bruteforce(std::span<const T> x, std::span<const T> y) {
  if (x.empty() || y.empty()) throw EmptyGroupError("Cliff's delta oracle needs two nonempty groups");
  if (static_cast<std::uint64_t>(x.size()) * y.size() > kCliffsOracleMaxPairs) {
    throw OracleScaleError("Cliff's delta oracle limited to 1e7 pairs");
  }
  std::int64_t num = 0;
  for (const T& a : x) {
    for (const T& b : y) num += (a > b) - (a < b);
  }
  BruteCliffs out{num, x.size(), y.size(), 0.0};
  out.delta = static_cast<double>(num) / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
  return out;
}

inline constexpr std::size_t kSpearmanOracleMaxLength = 100'000;

/// Ranks by counting (O(n^2)), then the textbook two-pass Pearson formula.
template <typename T>
double spearman_bruteforce(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw AlignmentError("Spearman oracle: length mismatch");
  const std::size_t n = a.size();
  if (n > kSpearmanOracleMaxLength) throw OracleScaleError("Spearman oracle limited to length 1e5");
  if (n < 2) throw ValidationError("Spearman oracle needs at least 2 values");
  auto counting_ranks = [n](std::span<const T> v) {
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t less = 0, equal = 0;
      for (std::size_t j = 0; j < n; ++j) {
        less += v[j] < v[i];
        equal += v[j] == v[i];
      }
      r[i] = static_cast<double>(less) + 0.5 * static_cast<double>(equal + 1);
    }
    return r;
  };
  const std::vector<double> ra = counting_ranks(a), rb = counting_ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace repsim
