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

// Image-side preprocessing: Otsu tissue detection on slide thumbnails,
// seeded patch sampling, and Macenko stain estimation / normalisation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "json.hpp"
#include "repsim/errors.hpp"
#include "repsim/image.hpp"
#include "repsim/linalg.hpp"
#include "repsim/random.hpp"

namespace repsim {

inline constexpr std::size_t kDefaultDownsample = 224;
inline constexpr std::size_t kDefaultPatchPx = 224;

using Histogram = std::array<std::uint64_t, 256>;

/// Grayscale slide thumbnail; one pixel covers downsample_factor^2 pixels of
/// the full-resolution slide.
struct GrayThumbnail {
  GrayImage image;
  std::size_t downsample_factor = kDefaultDownsample;
};

struct ForegroundMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;  // 1 = tissue
  std::uint8_t threshold = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t(1)));
  }
};

inline Histogram histogram_of(const GrayImage& img) {
  Histogram h{};
  for (auto p : img.pixels) ++h[p];
  return h;
}

namespace detail {

using u128 = unsigned __int128;

// Three-way comparison of n1/d1 and n2/d2 (all positive denominators),
// exact, by continued-fraction expansion.
inline int compare_fractions(u128 n1, u128 d1, u128 n2, u128 d2) {
  int sign = 1;
  for (;;) {
    const u128 q1 = n1 / d1, q2 = n2 / d2;
    if (q1 != q2) return q1 < q2 ? -sign : sign;
    const u128 r1 = n1 % d1, r2 = n2 % d2;
    if (r1 == 0 || r2 == 0) {
      if (r1 == r2) return 0;
      return r1 == 0 ? -sign : sign;
    }
    // r1/d1 < r2/d2  <=>  d1/r1 > d2/r2
    n1 = d1;
    d1 = r1;
    n2 = d2;
    d2 = r2;
    sign = -sign;
  }
}

}  // namespace detail

/// Otsu threshold t in 1..255: pixels with value < t form the first class.
/// Maximises the between-class variance w0 w1 (mu0 - mu1)^2 exactly in
/// integer arithmetic; ties go to the smallest t.
inline std::uint8_t otsu_threshold(const Histogram& hist) {
  std::uint64_t total = 0, nonzero = 0;
  for (auto c : hist) {
    total += c;
    nonzero += c > 0;
  }
  if (nonzero < 2) throw DegenerateHistogramError("Otsu needs at least two occupied histogram bins");
  // |S0 n1 - S1 n0| <= 255 N^2 < 2^64 for N < 2^28, so squares fit in 128 bits.
  if (total >= (std::uint64_t(1) << 28)) throw ValidationError("histogram too large for exact Otsu (>= 2^28 pixels)");
  std::uint64_t sum_all = 0;
  for (std::size_t b = 0; b < 256; ++b) sum_all += b * hist[b];

  // Between-class variance is proportional to (S0 n1 - S1 n0)^2 / (n0 n1).
  using i128 = __int128;
  std::uint8_t best_t = 0;
  detail::u128 best_num = 0, best_den = 1;
  std::uint64_t n0 = 0, s0 = 0;
  for (std::size_t t = 1; t < 256; ++t) {
    n0 += hist[t - 1];
    s0 += (t - 1) * hist[t - 1];
    const std::uint64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const std::uint64_t s1 = sum_all - s0;
    i128 diff = static_cast<i128>(s0) * n1 - static_cast<i128>(s1) * n0;
    if (diff < 0) diff = -diff;
    const auto a = static_cast<detail::u128>(diff);
    const detail::u128 num = a * a;
    const detail::u128 den = static_cast<detail::u128>(n0) * n1;
    if (best_t == 0 || detail::compare_fractions(num, den, best_num, best_den) > 0) {
      best_t = static_cast<std::uint8_t>(t);
      best_num = num;
      best_den = den;
    }
  }
  return best_t;
}

inline ForegroundMask foreground_mask(const GrayThumbnail& thumb) {
  const GrayImage& img = thumb.image;
  if (img.width == 0 || img.height == 0) throw ValidationError("empty thumbnail");
  const std::uint8_t t = otsu_threshold(histogram_of(img));
  ForegroundMask mask{img.width, img.height, std::vector<std::uint8_t>(img.pixels.size()), t};
  for (std::size_t p = 0; p < img.pixels.size(); ++p) mask.bits[p] = img.pixels[p] < t ? 1 : 0;
  return mask;
}

struct PatchCoord {
  std::int64_t x = 0;  // full-resolution top-left
  std::int64_t y = 0;

  bool operator==(const PatchCoord&) const = default;
};

/// Draws n foreground thumbnail pixels uniformly (without replacement unless
/// requested) and returns their full-resolution patch origins
/// (px * patch_px, py * patch_px).
inline std::vector<PatchCoord> sample_patch_coords(const ForegroundMask& mask, std::size_t n, std::size_t patch_px,
                                                   std::uint64_t seed, bool with_replacement = false) {
  std::vector<std::size_t> candidates;
  for (std::size_t p = 0; p < mask.bits.size(); ++p)
    if (mask.bits[p]) candidates.push_back(p);
  if (!with_replacement && candidates.size() < n) {
    throw CapacityError("requested " + std::to_string(n) + " patches but only " + std::to_string(candidates.size()) +
                        " foreground positions are available");
  }
  if (with_replacement && candidates.empty() && n > 0) {
    throw CapacityError("requested " + std::to_string(n) + " patches but no foreground positions are available");
  }
  Rng rng(seed);
  std::vector<PatchCoord> out;
  out.reserve(n);
  auto to_coord = [&](std::size_t p) {
    return PatchCoord{static_cast<std::int64_t>((p % mask.width) * patch_px),
                      static_cast<std::int64_t>((p / mask.width) * patch_px)};
  };
  if (with_replacement) {
    for (std::size_t i = 0; i < n; ++i) out.push_back(to_coord(candidates[rng.uniform_below(candidates.size())]));
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::swap(candidates[i], candidates[i + rng.uniform_below(candidates.size() - i)]);
    out.push_back(to_coord(candidates[i]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Macenko stain model

struct MacenkoOptions {
  double io = 240.0;    // transmitted light intensity
  double alpha = 1.0;   // angle percentile
  double beta = 0.15;   // optical density floor for tissue pixels
};

struct StainParams {
  /// 3 x 2, row-major: rows R, G, B; column 0 hematoxylin, column 1 eosin.
  std::array<double, 6> stain_matrix{};
  std::array<double, 2> max_concentrations{};
  MacenkoOptions options;

  double stain(std::size_t channel, std::size_t column) const { return stain_matrix[channel * 2 + column]; }
};

/// Reference target shipped with the toolkit: the H&E vectors and maximum
/// concentrations commonly used with the Macenko method.
inline StainParams reference_stain_params() {
  StainParams p;
  p.stain_matrix = {0.5626, 0.2159, 0.7201, 0.8012, 0.4062, 0.5581};
  for (std::size_t c = 0; c < 2; ++c) {
    const double norm = std::hypot(p.stain_matrix[c], p.stain_matrix[2 + c], p.stain_matrix[4 + c]);
    for (std::size_t r = 0; r < 3; ++r) p.stain_matrix[2 * r + c] /= norm;
  }
  p.max_concentrations = {1.9705, 1.0308};
  return p;
}

/// Percentile with linear interpolation between order statistics
/// (position q/100 * (n - 1)). Reorders `values`.
inline double percentile(std::vector<double>& values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty set");
  const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double v_lo = values[lo];
  if (hi == lo) return v_lo;
  const double v_hi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
  return v_lo + (pos - static_cast<double>(lo)) * (v_hi - v_lo);
}

namespace detail {

using Od = std::array<double, 3>;

inline std::array<double, 256> od_table(double io) {
  std::array<double, 256> t{};
  for (std::size_t v = 0; v < 256; ++v) t[v] = -std::log10((static_cast<double>(v) + 1.0) / io);
  return t;
}

inline bool is_tissue(const Od& od, double beta) { return od[0] > beta || od[1] > beta || od[2] > beta; }

// argmin ||S c - od||^2 subject to c >= 0, S with two unit columns. For two
// unknowns the active-set solution is one of: interior, one column, zero.
inline std::array<double, 2> nnls2(const StainParams& p, const Od& od) {
  double g00 = 0, g01 = 0, g11 = 0, b0 = 0, b1 = 0;
  for (std::size_t r = 0; r < 3; ++r) {
    const double s0 = p.stain(r, 0), s1 = p.stain(r, 1);
    g00 += s0 * s0;
    g01 += s0 * s1;
    g11 += s1 * s1;
    b0 += s0 * od[r];
    b1 += s1 * od[r];
  }
  const double det = g00 * g11 - g01 * g01;
  if (det > 1e-10 * g00 * g11) {
    const double c0 = (g11 * b0 - g01 * b1) / det;
    const double c1 = (g00 * b1 - g01 * b0) / det;
    if (c0 >= 0 && c1 >= 0) return {c0, c1};
  }
  const double only0 = std::max(0.0, b0 / g00);
  const double only1 = std::max(0.0, b1 / g11);
  // Residual reduction of each single-column fit is b_k^2 / g_kk.
  const double gain0 = only0 * b0, gain1 = only1 * b1;
  if (gain0 <= 0 && gain1 <= 0) return {0.0, 0.0};
  return gain0 >= gain1 ? std::array<double, 2>{only0, 0.0} : std::array<double, 2>{0.0, only1};
}

inline std::vector<Od> optical_density(const RgbImage& img, double io) {
  const auto table = od_table(io);
  std::vector<Od> od(img.pixel_count());
  for (std::size_t p = 0; p < od.size(); ++p) {
    od[p] = {table[img.pixels[3 * p]], table[img.pixels[3 * p + 1]], table[img.pixels[3 * p + 2]]};
  }
  return od;
}

}  // namespace detail

inline constexpr std::size_t kMinTissuePixels = 100;
/// Second / first eigenvalue ratio of the OD covariance below which the
/// stain plane is treated as undefined.
inline constexpr double kDegenerateStainRatio = 1e-3;

/// Macenko estimate of the stain matrix and maximum concentrations of a
/// patch.
inline StainParams estimate_stain_matrix(const RgbImage& patch, const MacenkoOptions& opts = {}) {
  if (patch.pixels.size() != patch.pixel_count() * 3) throw ValidationError("RGB buffer size mismatch");
  const std::vector<detail::Od> od = detail::optical_density(patch, opts.io);
  std::vector<detail::Od> tissue;
  for (const auto& v : od)
    if (detail::is_tissue(v, opts.beta)) tissue.push_back(v);
  if (tissue.size() < kMinTissuePixels) {
    throw InsufficientTissueError("only " + std::to_string(tissue.size()) + " pixels exceed OD " +
                                  std::to_string(opts.beta) + " (need " + std::to_string(kMinTissuePixels) + ")");
  }

  std::array<double, 3> mean{};
  for (const auto& v : tissue)
    for (std::size_t c = 0; c < 3; ++c) mean[c] += v[c];
  for (auto& m : mean) m /= static_cast<double>(tissue.size());
  std::vector<double> cov(9, 0.0);
  for (const auto& v : tissue)
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b <= a; ++b) cov[a * 3 + b] += (v[a] - mean[a]) * (v[b] - mean[b]);
  for (auto& c : cov) c /= static_cast<double>(tissue.size() - 1);

  const auto eig = linalg::symmetric_eigen(cov, 3);
  const double l1 = eig.values[2], l2 = eig.values[1];
  if (!(l1 > 0) || l2 <= kDegenerateStainRatio * l1) {
    throw DegenerateStainError("optical-density covariance has rank < 2 (eigenvalue ratio " +
                               std::to_string(l1 > 0 ? l2 / l1 : 0.0) + "); stain plane is undefined");
  }
  std::array<double, 3> e1{}, e2{};
  for (std::size_t r = 0; r < 3; ++r) {
    e1[r] = eig.vectors[r * 3 + 2];
    e2[r] = eig.vectors[r * 3 + 1];
  }
  if (e1[0] < 0) for (auto& v : e1) v = -v;
  if (e2[0] < 0) for (auto& v : e2) v = -v;

  std::vector<double> phi(tissue.size());
  for (std::size_t p = 0; p < tissue.size(); ++p) {
    double t1 = 0, t2 = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      t1 += tissue[p][r] * e1[r];
      t2 += tissue[p][r] * e2[r];
    }
    phi[p] = std::atan2(t2, t1);
  }
  const double min_phi = percentile(phi, opts.alpha);
  const double max_phi = percentile(phi, 100.0 - opts.alpha);
  std::array<double, 3> v1{}, v2{};
  for (std::size_t r = 0; r < 3; ++r) {
    v1[r] = e1[r] * std::cos(min_phi) + e2[r] * std::sin(min_phi);
    v2[r] = e1[r] * std::cos(max_phi) + e2[r] * std::sin(max_phi);
  }
  // Hematoxylin absorbs more red light than eosin.
  const auto& h = v1[0] > v2[0] ? v1 : v2;
  const auto& e = v1[0] > v2[0] ? v2 : v1;

  StainParams out;
  out.options = opts;
  for (std::size_t col = 0; col < 2; ++col) {
    const auto& src = col == 0 ? h : e;
    double norm = 0;
    for (std::size_t r = 0; r < 3; ++r) norm += std::max(src[r], 0.0) * std::max(src[r], 0.0);
    norm = std::sqrt(norm);
    if (norm == 0) throw DegenerateStainError("stain direction has no positive optical density component");
    for (std::size_t r = 0; r < 3; ++r) out.stain_matrix[r * 2 + col] = std::max(src[r], 0.0) / norm;
  }

  std::vector<double> c0(od.size()), c1(od.size());
  for (std::size_t p = 0; p < od.size(); ++p) {
    const auto c = detail::nnls2(out, od[p]);
    c0[p] = c[0];
    c1[p] = c[1];
  }
  out.max_concentrations = {percentile(c0, 99.0), percentile(c1, 99.0)};
  if (!(out.max_concentrations[0] > 0) || !(out.max_concentrations[1] > 0)) {
    throw DegenerateStainError("a stain has zero 99th-percentile concentration");
  }
  return out;
}

/// Maps a patch from its own stain model onto the reference model. Pixels
/// whose optical density is at most beta in every channel are copied.
inline RgbImage normalize_stain(const RgbImage& patch, const StainParams& source, const StainParams& reference) {
  for (double m : source.max_concentrations)
    if (!(m > 0)) throw ValidationError("source max concentrations must be positive");
  for (double m : reference.max_concentrations)
    if (!(m > 0)) throw ValidationError("reference max concentrations must be positive");
  const double io = source.options.io;
  const double beta = source.options.beta;
  const std::vector<detail::Od> od = detail::optical_density(patch, io);
  const std::array<double, 2> scale{reference.max_concentrations[0] / source.max_concentrations[0],
                                    reference.max_concentrations[1] / source.max_concentrations[1]};
  RgbImage out = patch;
  for (std::size_t p = 0; p < od.size(); ++p) {
    if (!detail::is_tissue(od[p], beta)) continue;
    auto c = detail::nnls2(source, od[p]);
    c[0] *= scale[0];
    c[1] *= scale[1];
    for (std::size_t r = 0; r < 3; ++r) {
      const double density = reference.stain(r, 0) * c[0] + reference.stain(r, 1) * c[1];
      // Inverse of od = -log10((I + 1) / io).
      const double value = io * std::pow(10.0, -density) - 1.0;
      out.pixels[3 * p + r] = static_cast<std::uint8_t>(std::floor(std::clamp(value, 0.0, 255.0) + 0.5));
    }
  }
  return out;
}

inline nlohmann::ordered_json to_json(const StainParams& p) {
  nlohmann::ordered_json j;
  j["stain_matrix"] = {{p.stain_matrix[0], p.stain_matrix[1]},
                       {p.stain_matrix[2], p.stain_matrix[3]},
                       {p.stain_matrix[4], p.stain_matrix[5]}};
  j["max_concentrations"] = p.max_concentrations;
  j["io"] = p.options.io;
  j["alpha"] = p.options.alpha;
  j["beta"] = p.options.beta;
  return j;
}

inline StainParams stain_params_from_json(const nlohmann::json& j) {
  StainParams p;
  try {
    const auto& m = j.at("stain_matrix");
    if (m.size() != 3) throw ValidationError("stain_matrix must have 3 rows");
    for (std::size_t r = 0; r < 3; ++r) {
      if (m[r].size() != 2) throw ValidationError("stain_matrix rows must have 2 columns");
      for (std::size_t c = 0; c < 2; ++c) p.stain_matrix[r * 2 + c] = m[r][c].get<double>();
    }
    p.max_concentrations = {j.at("max_concentrations")[0].get<double>(), j.at("max_concentrations")[1].get<double>()};
    p.options.io = j.value("io", 240.0);
    p.options.alpha = j.value("alpha", 1.0);
    p.options.beta = j.value("beta", 0.15);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("stain params: ") + e.what());
  }
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t r = 0; r < 3; ++r) p.stain_matrix[2 * r + c] = std::max(p.stain_matrix[2 * r + c], 0.0);
    const double norm = std::hypot(p.stain_matrix[c], p.stain_matrix[2 + c], p.stain_matrix[4 + c]);
    if (!(norm > 0)) throw ValidationError("stain column has zero norm");
    for (std::size_t r = 0; r < 3; ++r) p.stain_matrix[2 * r + c] /= norm;
    if (!(p.max_concentrations[c] > 0)) throw ValidationError("max_concentrations must be positive");
  }
  return p;
}

}  // namespace repsim
