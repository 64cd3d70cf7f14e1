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

// Singular-value spectrum of mean-centred embeddings, computed through the
// smaller of the two Gram matrices.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "repsim/embedding_store.hpp"
#include "repsim/errors.hpp"
#include "repsim/linalg.hpp"
#include "repsim/parallel.hpp"

namespace repsim {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

inline Matrix center_columns(const Matrix& x) {
  if (x.rows < 2) throw ValidationError("centering needs at least 2 rows");
  Matrix out = x;
  std::vector<double> mean(x.cols, 0.0);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) mean[c] += x(r, c);
  for (auto& m : mean) m /= static_cast<double>(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r)
    for (std::size_t c = 0; c < x.cols; ++c) out(r, c) -= mean[c];
  return out;
}

inline Matrix center_columns(const EmbeddingSet& set) {
  Matrix x{set.n_items(), set.dim(), std::vector<double>(set.data().begin(), set.data().end())};
  return center_columns(x);
}

enum class SpectrumMass { Singular, Variance };

inline SpectrumMass parse_spectrum_mass(std::string_view s) {
  if (s == "singular") return SpectrumMass::Singular;
  if (s == "variance") return SpectrumMass::Variance;
  throw ValidationError("unknown mass '" + std::string(s) + "' (expected singular|variance)");
}

struct Spectrum {
  std::vector<double> singular_values;  // descending
  std::vector<double> normalized;       // sums to 1
  std::vector<double> cumulative;       // running sum of normalized
  std::size_t n_items = 0;
  std::size_t dim = 0;
  SpectrumMass mass = SpectrumMass::Singular;
};

/// Builds a Spectrum from raw singular values (any order). Values below
/// 1e-12 of the largest are set to zero.
inline Spectrum make_spectrum(std::vector<double> singular_values, std::size_t n_items, std::size_t dim,
                              SpectrumMass mass = SpectrumMass::Singular) {
  for (double s : singular_values) {
    if (!std::isfinite(s)) throw ValidationError("non-finite singular value");
  }
  std::sort(singular_values.begin(), singular_values.end(), std::greater<>());
  for (auto& s : singular_values) s = std::max(s, 0.0);
  const double top = singular_values.empty() ? 0.0 : singular_values.front();
  for (auto& s : singular_values)
    if (s < 1e-12 * top) s = 0.0;
  if (top == 0.0) throw ValidationError("spectrum is identically zero (all embeddings equal)");

  Spectrum out{std::move(singular_values), {}, {}, n_items, dim, mass};
  double total = 0.0;
  for (double s : out.singular_values) total += mass == SpectrumMass::Singular ? s : s * s;
  double running = 0.0;
  for (double s : out.singular_values) {
    const double w = (mass == SpectrumMass::Singular ? s : s * s) / total;
    out.normalized.push_back(w);
    running += w;
    out.cumulative.push_back(running);
  }
  return out;
}

namespace detail {

// G += B^T B for a block of `rows` centred rows (row-major, width d). Only
// the upper triangle of G is updated.
inline void gram_accumulate(std::vector<double>& gram, const double* block, std::size_t rows, std::size_t d) {
  parallel_for(d, [&](std::size_t i) {
    double* gi = gram.data() + i * d;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = block + r * d;
      const double xi = x[i];
      if (xi == 0.0) continue;
      for (std::size_t j = i; j < d; ++j) gi[j] += xi * x[j];
    }
  });
}

inline std::vector<double> singular_values_from_gram(std::vector<double> gram, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j) gram[i * n + j] = gram[j * n + i];
  const auto eig = linalg::symmetric_eigen(gram, n, /*want_vectors=*/false);
  std::vector<double> sv(n);
  for (std::size_t k = 0; k < n; ++k) sv[k] = std::sqrt(std::max(eig.values[k], 0.0));
  return sv;
}

}  // namespace detail

/// Singular values of a centred matrix via its Gram matrix: X^T X (d x d)
/// when N > d, otherwise X X^T (N x N). Length min(N, d).
inline Spectrum singular_spectrum(const Matrix& centered, SpectrumMass mass = SpectrumMass::Singular) {
  for (double v : centered.values) {
    if (!std::isfinite(v)) throw ValidationError("non-finite entry in matrix");
  }
  const std::size_t n = centered.rows, d = centered.cols;
  if (n == 0 || d == 0) throw ValidationError("empty matrix");
  std::vector<double> gram;
  std::size_t g = 0;
  if (n > d) {
    g = d;
    gram.assign(d * d, 0.0);
    constexpr std::size_t kBlock = 64;
    for (std::size_t r0 = 0; r0 < n; r0 += kBlock) {
      detail::gram_accumulate(gram, centered.values.data() + r0 * d, std::min(kBlock, n - r0), d);
    }
  } else {
    g = n;
    gram.assign(n * n, 0.0);
    parallel_for(n, [&](std::size_t i) {
      for (std::size_t j = i; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += centered(i, c) * centered(j, c);
        gram[i * n + j] = acc;
      }
    });
  }
  return make_spectrum(detail::singular_values_from_gram(std::move(gram), g), n, d, mass);
}

/// Spectrum of an EMB1 file, streamed in row blocks: one pass for column
/// means, one for the Gram matrix. Falls back to an in-memory N x N Gram
/// when d >= N.
inline Spectrum spectrum_from_file(const std::filesystem::path& path, SpectrumMass mass = SpectrumMass::Singular,
                                   std::size_t block_rows = 4096) {
  EmbeddingReader reader(path);
  const std::size_t n = reader.n_items(), d = reader.dim();
  if (n < 2) throw ValidationError("N >= 2 required");
  std::vector<float> raw;
  if (d >= n) {
    reader.read_rows(0, n, raw);
    Matrix x{n, d, std::vector<double>(raw.begin(), raw.end())};
    return singular_spectrum(center_columns(x), mass);
  }
  std::vector<double> mean(d, 0.0);
  for (std::size_t r0 = 0; r0 < n; r0 += block_rows) {
    const std::size_t rows = std::min(block_rows, n - r0);
    reader.read_rows(r0, rows, raw);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += raw[r * d + c];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  std::vector<double> gram(d * d, 0.0), block;
  for (std::size_t r0 = 0; r0 < n; r0 += block_rows) {
    const std::size_t rows = std::min(block_rows, n - r0);
    reader.read_rows(r0, rows, raw);
    block.resize(rows * d);
    for (std::size_t k = 0; k < rows * d; ++k) block[k] = raw[k] - mean[k % d];
    constexpr std::size_t kBlock = 64;
    for (std::size_t b0 = 0; b0 < rows; b0 += kBlock) {
      detail::gram_accumulate(gram, block.data() + b0 * d, std::min(kBlock, rows - b0), d);
    }
  }
  return make_spectrum(detail::singular_values_from_gram(std::move(gram), d), n, d, mass);
}

struct CurvePoint {
  double fraction_features = 0.0;
  double cumulative_mass = 0.0;
};

/// Point k (1-based) is (k / len, cumulative[k-1]).
inline std::vector<CurvePoint> cumulative_curve(const Spectrum& s) {
  std::vector<CurvePoint> out;
  const std::size_t len = s.cumulative.size();
  for (std::size_t k = 1; k <= len; ++k) {
    out.push_back({static_cast<double>(k) / static_cast<double>(len), s.cumulative[k - 1]});
  }
  return out;
}

/// Smallest number of leading components whose cumulative mass reaches
/// `fraction` (with 1e-12 slack for rounding).
inline std::size_t features_to_reach(const Spectrum& s, double fraction) {
  for (std::size_t k = 0; k < s.cumulative.size(); ++k) {
    if (s.cumulative[k] >= fraction - 1e-12) return k + 1;
  }
  return s.cumulative.size();
}

namespace detail {
inline std::string curve_line(double x, double y) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g,%.10g\n", x, y);
  return buf;
}
}  // namespace detail

inline std::string curve_csv(const Spectrum& s) {
  std::string out = "fraction_features,cumulative_mass\n";
  for (const auto& p : cumulative_curve(s)) out += detail::curve_line(p.fraction_features, p.cumulative_mass);
  return out;
}

/// Long-format curves of several models for one plot.
inline std::string combined_curve_csv(const std::vector<std::pair<std::string, Spectrum>>& spectra) {
  std::string out = "model,fraction_features,cumulative_mass\n";
  for (const auto& [model, s] : spectra) {
    for (const auto& p : cumulative_curve(s)) out += model + ',' + detail::curve_line(p.fraction_features, p.cumulative_mass);
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Spectrum& s) {
  nlohmann::ordered_json j;
  j["n_items"] = s.n_items;
  j["dim"] = s.dim;
  j["mass"] = s.mass == SpectrumMass::Singular ? "singular" : "variance";
  j["singular_values"] = s.singular_values;
  j["normalized"] = s.normalized;
  j["cumulative"] = s.cumulative;
  auto& reach = j["features_to_reach"] = nlohmann::ordered_json::object();
  for (double f : {0.5, 0.8, 0.9, 0.95, 0.99}) {
    char key[16];
    std::snprintf(key, sizeof key, "%g", f);
    reach[key] = features_to_reach(s, f);
  }
  return j;
}

}  // namespace repsim
