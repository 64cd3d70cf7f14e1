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

// Independent reference implementations used by the unit tests and the
// acceptance suite. None of these call into the code they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "repsim/embedding_store.hpp"
#include "repsim/image.hpp"
#include "repsim/rdm.hpp"
#include "repsim/random.hpp"

namespace repsim::oracle {

/// Ward agglomeration that recomputes every candidate merge cost from the
/// original dissimilarities: for clusters A, B
///   h(A, B)^2 = 2 |A||B| / (|A|+|B|) * (m_AB - m_AA / 2 - m_BB / 2),
/// where m_XY is the mean squared dissimilarity over ordered pairs in X x Y.
/// Cluster ids follow the leaves-then-merges convention; ties go to the
/// smallest id pair.
struct WardStep {
  std::size_t a, b;
  double height;
};

inline std::vector<WardStep> ward_naive(const std::vector<double>& dissimilarity, std::size_t m) {
  std::vector<std::vector<std::size_t>> members(2 * m - 1);
  std::vector<bool> alive(2 * m - 1, false);
  for (std::size_t i = 0; i < m; ++i) {
    members[i] = {i};
    alive[i] = true;
  }
  auto mean_sq = [&](const std::vector<std::size_t>& x, const std::vector<std::size_t>& y) {
    long double s = 0;
    for (auto i : x)
      for (auto j : y) s += static_cast<long double>(dissimilarity[i * m + j]) * dissimilarity[i * m + j];
    return s / (static_cast<long double>(x.size()) * y.size());
  };
  std::vector<WardStep> steps;
  for (std::size_t step = 0; step + 1 < m; ++step) {
    long double best = std::numeric_limits<long double>::infinity();
    std::size_t ba = 0, bb = 0;
    for (std::size_t a = 0; a < m + step; ++a) {
      if (!alive[a]) continue;
      for (std::size_t b = a + 1; b < m + step; ++b) {
        if (!alive[b]) continue;
        const long double na = members[a].size(), nb = members[b].size();
        const long double h2 = 2 * na * nb / (na + nb) *
                               (mean_sq(members[a], members[b]) - mean_sq(members[a], members[a]) / 2 -
                                mean_sq(members[b], members[b]) / 2);
        const long double h = std::sqrt(std::max(h2, 0.0L));
        if (h < best) {
          best = h;
          ba = a;
          bb = b;
        }
      }
    }
    const std::size_t id = m + step;
    members[id] = members[ba];
    members[id].insert(members[id].end(), members[bb].begin(), members[bb].end());
    alive[ba] = alive[bb] = false;
    alive[id] = true;
    steps.push_back({ba, bb, static_cast<double>(best)});
  }
  return steps;
}

// Naive reference: long double accumulation, rows looked up through the
// RDM labels, textbook Pearson formula.
inline long double naive_distance(const EmbeddingSet& set, std::size_t a, std::size_t b, Metric metric) {
  const auto x = set.row(a), y = set.row(b);
  const std::size_t d = set.dim();
  if (metric == Metric::Euclidean) {
    long double s = 0;
    for (std::size_t k = 0; k < d; ++k) s += (static_cast<long double>(x[k]) - y[k]) * (static_cast<long double>(x[k]) - y[k]);
    return std::sqrt(s);
  }
  long double mx = 0, my = 0;
  for (std::size_t k = 0; k < d; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= d;
  my /= d;
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t k = 0; k < d; ++k) {
    sxy += (x[k] - mx) * (y[k] - my);
    sxx += (x[k] - mx) * (x[k] - mx);
    syy += (y[k] - my) * (y[k] - my);
  }
  return 1.0L - sxy / std::sqrt(sxx * syy);
}

/// Exhaustive Otsu over all 256 candidate thresholds with exact rational
/// arithmetic on the textbook objective w0 w1 (mu0 - mu1)^2, classes
/// {v < t} and {v >= t}. Candidates with an empty class are skipped; ties
/// keep the smallest t. Returns -1 when no candidate is valid.
inline int otsu_exhaustive(const std::array<std::uint64_t, 256>& hist) {
  using boost::multiprecision::cpp_rational;
  cpp_rational total = 0;
  for (auto c : hist) total += c;
  int best_t = -1;
  cpp_rational best = -1;
  for (int t = 0; t < 256; ++t) {
    cpp_rational n0 = 0, n1 = 0, s0 = 0, s1 = 0;
    for (int v = 0; v < 256; ++v) {
      if (v < t) {
        n0 += hist[v];
        s0 += cpp_rational(v) * hist[v];
      } else {
        n1 += hist[v];
        s1 += cpp_rational(v) * hist[v];
      }
    }
    if (n0 == 0 || n1 == 0) continue;
    const cpp_rational w0 = n0 / total, w1 = n1 / total;
    const cpp_rational diff = s0 / n0 - s1 / n1;
    const cpp_rational obj = w0 * w1 * diff * diff;
    if (obj > best) {
      best = obj;
      best_t = t;
    }
  }
  return best_t;
}

/// Forward Beer-Lambert synthesis: pixel = io * 10^(-S c) - 1, rounded,
/// with unit-norm stain columns S (3 x 2 row-major) and concentrations c
/// drawn per pixel. A fraction of pixels is left as background.
struct SynthStainPatch {
  RgbImage image;
  std::array<double, 6> stains{};
};

inline std::array<double, 6> random_stain_matrix(Rng& rng) {
  // Perturbations of typical H and E directions, kept nonnegative.
  const std::array<double, 6> base = {0.65, 0.07, 0.70, 0.99, 0.29, 0.11};
  std::array<double, 6> s{};
  for (std::size_t k = 0; k < 6; ++k) s[k] = std::max(0.01, base[k] + 0.08 * rng.normal());
  for (std::size_t c = 0; c < 2; ++c) {
    const double n = std::sqrt(s[c] * s[c] + s[2 + c] * s[2 + c] + s[4 + c] * s[4 + c]);
    for (std::size_t r = 0; r < 3; ++r) s[2 * r + c] /= n;
  }
  return s;
}

inline SynthStainPatch synthesize_stain_patch(const std::array<double, 6>& stains, std::size_t side, Rng& rng,
                                              double io = 240.0, double background_fraction = 0.1) {
  SynthStainPatch out;
  out.stains = stains;
  out.image.width = out.image.height = side;
  out.image.pixels.resize(side * side * 3);
  for (std::size_t p = 0; p < side * side; ++p) {
    double c0 = 0, c1 = 0;
    if (rng.uniform01() >= background_fraction) {
      // Mixtures plus pure-stain pixels so both extreme directions are present.
      const double kind = rng.uniform01();
      c0 = kind < 0.15 ? 0.0 : 1.2 * rng.uniform01();
      c1 = kind > 0.85 ? 0.0 : 1.0 * rng.uniform01();
    }
    for (std::size_t r = 0; r < 3; ++r) {
      const double od = stains[2 * r] * c0 + stains[2 * r + 1] * c1;
      const double v = io * std::pow(10.0, -od) - 1.0;
      out.image.pixels[3 * p + r] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return out;
}

/// Angle in degrees between two 3-vectors taken from column `col` of two
/// 3 x 2 row-major matrices.
inline double column_angle_deg(const std::array<double, 6>& a, const std::array<double, 6>& b, std::size_t col) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    dot += a[2 * r + col] * b[2 * r + col];
    na += a[2 * r + col] * a[2 * r + col];
    nb += b[2 * r + col] * b[2 * r + col];
  }
  return std::acos(std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0)) * 180.0 / 3.14159265358979323846;
}

/// Pixels of `once` that are tissue, and how many of them move by at most
/// `levels` in every channel between `once` and `twice`.
struct StableCount {
  std::size_t tissue = 0;
  std::size_t stable = 0;
};

inline StableCount count_stable_pixels(const RgbImage& once, const RgbImage& twice, double io, double beta,
                                       int levels = 2) {
  StableCount out;
  for (std::size_t p = 0; p < once.pixel_count(); ++p) {
    bool tissue = false, stable = true;
    for (std::size_t c = 0; c < 3; ++c) {
      const int a = once.pixels[3 * p + c], b = twice.pixels[3 * p + c];
      tissue |= -std::log10((a + 1.0) / io) > beta;
      stable &= std::abs(a - b) <= levels;
    }
    out.tissue += tissue;
    out.stable += tissue && stable;
  }
  return out;
}

}  // namespace repsim::oracle
