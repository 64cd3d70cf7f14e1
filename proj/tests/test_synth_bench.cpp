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

#include <gtest/gtest.h>

#include <cstring>

#include "repsim/rdm.hpp"
#include "repsim/rsa_compare.hpp"
#include "repsim/specificity.hpp"
#include "repsim/synth_bench.hpp"
#include "test_util.hpp"

namespace repsim {
namespace {

// Monte Carlo bands from tools/calibrate_bands (seeds 1,000,000..1,000,099,
// mean +/- 5 sd, clipped to [-1, 1]).
constexpr double kSlideBandLo = 0.986337;  // cfg(4, 10, 10, 64), sigma_slide = sigma_noise = 1
constexpr double kSlideBandHi = 1.0;
constexpr double kNullSlideBandHi = 0.0506794;  // same cfg with sigma_slide = 0

SynthConfig small_config(std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_diseases = 4;
  cfg.slides_per_disease = 10;
  cfg.patches_per_slide = 10;
  cfg.dim = 64;
  cfg.seed = seed;
  return cfg;
}

double slide_delta(const SynthConfig& cfg) {
  return batch_specificity(compute_rdm(generate_synthetic(cfg), Metric::Euclidean), GroupingSpec::slide()).delta;
}

double disease_delta(const SynthConfig& cfg) {
  return batch_specificity(compute_rdm(generate_synthetic(cfg), Metric::Euclidean), GroupingSpec::disease()).delta;
}

TEST(GenerateSynthetic, PureFunctionOfConfig) {
  const SynthConfig cfg = small_config(3);
  test::TempDir dir;
  write_embedding_set(generate_synthetic(cfg), dir / "a.emb1");
  write_embedding_set(generate_synthetic(cfg), dir / "b.emb1");
  EXPECT_EQ(detail::read_file_bytes(dir / "a.emb1"), detail::read_file_bytes(dir / "b.emb1"));
  EXPECT_EQ(detail::read_file_bytes(dir / "a.emb1.tsv"), detail::read_file_bytes(dir / "b.emb1.tsv"));
  SynthConfig other = cfg;
  other.seed = 4;
  EXPECT_FALSE(generate_synthetic(other) == generate_synthetic(cfg));
}

TEST(GenerateSynthetic, ComponentModel) {
  SynthConfig cfg = small_config(5);
  cfg.n_diseases = 2;
  cfg.slides_per_disease = 3;
  cfg.patches_per_slide = 4;
  cfg.dim = 5;
  cfg.sigma_disease = 0.5;
  cfg.sigma_slide = 2.0;
  cfg.sigma_noise = 0.25;
  const EmbeddingSet set = generate_synthetic(cfg);
  ASSERT_EQ(set.n_items(), 24u);
  // Independent redraw of the components in the documented order.
  Rng rng(5);
  std::vector<double> g(2 * 5 + 6 * 5 + 24 * 5);
  for (auto& x : g) x = rng.normal();
  for (std::size_t item = 0; item < 24; ++item) {
    const std::size_t slide = item / 4, disease = slide / 3;
    for (std::size_t k = 0; k < 5; ++k) {
      const double want = 0.5 * g[disease * 5 + k] + 2.0 * g[10 + slide * 5 + k] + 0.25 * g[40 + item * 5 + k];
      EXPECT_EQ(set.row(item)[k], static_cast<float>(want));
    }
  }
  const auto& rows = set.manifest().rows;
  EXPECT_EQ(rows[5].slide_id, "D0-S0001");
  EXPECT_EQ(rows[5].disease_label, "D0");
  EXPECT_EQ(rows[5].patch_id, "p0001");
  EXPECT_EQ(rows[23].slide_id, "D1-S0002");
  EXPECT_EQ(rows[23].model_id, "synthetic");
}

TEST(GenerateSynthetic, ConfigValidation) {
  SynthConfig cfg = small_config(1);
  cfg.sigma_disease = cfg.sigma_slide = cfg.sigma_noise = 0;
  EXPECT_THROW(generate_synthetic(cfg), ValidationError);
  cfg = small_config(1);
  cfg.sigma_slide = -1;
  EXPECT_THROW(generate_synthetic(cfg), ValidationError);
  cfg = small_config(1);
  cfg.dim = 0;
  EXPECT_THROW(generate_synthetic(cfg), ValidationError);
  cfg = small_config(1);
  cfg.n_diseases = cfg.slides_per_disease = cfg.patches_per_slide = 1;
  EXPECT_THROW(generate_synthetic(cfg), ValidationError);
}

TEST(GenerateSynthetic, JsonConfig) {
  const SynthConfig cfg = synth_config_from_json(nlohmann::json::parse(
      R"({"n_diseases": 2, "slides_per_disease": 3, "patches_per_slide": 4, "dim": 8, "sigma_slide": 0.5, "seed": 9})"));
  EXPECT_EQ(cfg.n_items(), 24u);
  EXPECT_EQ(cfg.sigma_slide, 0.5);
  EXPECT_EQ(cfg.sigma_noise, 1.0);
  const SynthConfig back = synth_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(cfg).dump());
  EXPECT_THROW(synth_config_from_json(nlohmann::json::parse(R"({"dim": "wide"})")), FormatError);
}

TEST(PlantedEffects, NoiseFreeSlidesSeparateCompletely) {
  SynthConfig cfg = small_config(6);
  cfg.sigma_noise = 0.0;
  EXPECT_EQ(slide_delta(cfg), 1.0);
}

TEST(PlantedEffects, NullModelNearZero) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SynthConfig cfg = small_config(seed);
    cfg.sigma_slide = 0.0;
    EXPECT_LT(std::fabs(slide_delta(cfg)), kNullSlideBandHi) << "seed " << seed;
  }
}

TEST(PlantedEffects, SlideDeltaInsideCalibratedBand) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const double d = slide_delta(small_config(seed));
    EXPECT_GE(d, kSlideBandLo) << "seed " << seed;
    EXPECT_LE(d, kSlideBandHi) << "seed " << seed;
  }
}

TEST(PlantedEffects, MonotoneInSlideSigma) {
  const double levels[] = {0.0, 0.25, 0.5, 1.0, 2.0};
  int inversions = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    double prev = -2.0;
    for (double s : levels) {
      SynthConfig cfg = small_config(seed);
      cfg.sigma_slide = s;
      const double d = slide_delta(cfg);
      inversions += d < prev;
      prev = d;
    }
  }
  EXPECT_LE(inversions, 1);
}

TEST(PlantedEffects, DiseaseEffectExceedsNullBand) {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SynthConfig cfg = small_config(seed);
    cfg.sigma_disease = 1.0;
    cfg.sigma_slide = 0.0;
    EXPECT_GT(disease_delta(cfg), kNullSlideBandHi) << "seed " << seed;
  }
}

TEST(Oracles, CliffsExamples) {
  const std::vector<int> one = {1}, zero = {0};
  EXPECT_EQ(cliffs_delta_bruteforce<int>(one, zero).delta, 1.0);
  EXPECT_EQ(cliffs_delta_bruteforce<int>(zero, zero).delta, 0.0);
  // Hand-counted: 4 pairs with x > y, 4 with x < y, 1 tie.
  const std::vector<int> x = {1, 3, 5}, y = {2, 3, 4};
  const auto r = cliffs_delta_bruteforce<int>(x, y);
  EXPECT_EQ(r.numerator, 0);
  const std::vector<int> x2 = {2, 4, 4, 7}, y2 = {1, 4, 6};
  // 2: >1, <4, <6 -> +1 -2; 4: >1, =4, <6 -> 0 (twice); 7: >1, >4, >6 -> +3.
  EXPECT_EQ(cliffs_delta_bruteforce<int>(x2, y2).numerator, 2);
  const std::vector<int> none;
  EXPECT_THROW(cliffs_delta_bruteforce<int>(none, one), EmptyGroupError);
}

TEST(Oracles, SpearmanExamples) {
  const std::vector<double> a = {1, 2, 3}, b = {3, 2, 1}, c = {0.5, 7, -2, 9};
  EXPECT_DOUBLE_EQ(spearman_bruteforce<double>(a, b), -1.0);
  EXPECT_DOUBLE_EQ(spearman_bruteforce<double>(c, c), 1.0);
  const std::vector<double> short_v = {1, 2};
  EXPECT_THROW(spearman_bruteforce<double>(a, short_v), AlignmentError);
}

TEST(Oracles, ScaleGuards) {
  const std::vector<float> big(3163, 1.0f), other(3163, 0.0f);
  EXPECT_THROW(cliffs_delta_bruteforce<float>(big, other), OracleScaleError);
  const std::vector<float> long_v(kSpearmanOracleMaxLength + 1, 1.0f);
  EXPECT_THROW(spearman_bruteforce<float>(long_v, long_v), OracleScaleError);
}

TEST(Oracles, AgreeWithFastPaths) {
  Rng rng(22);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.uniform_below(200);
    std::vector<float> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<float>(rng.uniform_below(6));
      b[i] = static_cast<float>(rng.uniform_below(6)) + (i % 2 ? 0.5f : 0.0f);
    }
    EXPECT_EQ(cliffs_delta(a, b).numerator(), static_cast<__int128>(cliffs_delta_bruteforce<float>(a, b).numerator));
    const bool constant = std::all_of(a.begin(), a.end(), [&](float v) { return v == a[0]; }) ||
                          std::all_of(b.begin(), b.end(), [&](float v) { return v == b[0]; });
    if (!constant) {
      EXPECT_NEAR(spearman(a, b), spearman_bruteforce<float>(a, b), 1e-12);
    }
  }
}

}  // namespace
}  // namespace repsim
