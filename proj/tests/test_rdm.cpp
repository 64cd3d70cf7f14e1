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

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "repsim/parallel.hpp"
#include "repsim/rdm.hpp"
#include "test_util.hpp"

namespace repsim {
namespace {

using test::grid_manifest;
using test::TempDir;

void expect_matches_naive(const EmbeddingSet& set, const Rdm& rdm, double rel_tol) {
  const std::size_t n = set.n_items();
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      const long double ref =
          oracle::naive_distance(set, rdm.labels().rows[i].row_index, rdm.labels().rows[j].row_index, rdm.metric());
      const double got = rdm.values()[k];
      ASSERT_LE(std::fabs(got - static_cast<double>(ref)), rel_tol * std::max(1.0, static_cast<double>(std::fabs(ref))))
          << "entry (" << i << ", " << j << ")";
    }
  }
}

TEST(CondensedIndex, SmallCases) {
  EXPECT_EQ(condensed_index(0, 1, 4), 0u);
  EXPECT_EQ(condensed_index(2, 3, 4), 5u);
  EXPECT_EQ(condensed_size(4), 6u);
  EXPECT_THROW(condensed_index(1, 1, 4), IndexError);
  EXPECT_THROW(condensed_index(2, 1, 4), IndexError);
  EXPECT_THROW(condensed_index(0, 4, 4), IndexError);
}

TEST(CondensedIndex, ExhaustiveBijectionN50) {
  std::set<std::uint64_t> seen;
  std::uint64_t expected = 0;
  for (std::uint64_t i = 0; i < 50; ++i) {
    for (std::uint64_t j = i + 1; j < 50; ++j) {
      const auto k = condensed_index(i, j, 50);
      EXPECT_EQ(k, expected++);
      seen.insert(k);
    }
  }
  EXPECT_EQ(seen.size(), 1225u);
  EXPECT_EQ(*seen.rbegin(), 1224u);
}

TEST(ComputeRdm, OneDimensional) {
  const EmbeddingSet set(2, 1, {0.0f, 3.0f}, grid_manifest(1, 1, 2));
  const Rdm rdm = compute_rdm(set, Metric::Euclidean);
  ASSERT_EQ(rdm.values().size(), 1u);
  EXPECT_EQ(rdm.values()[0], 3.0f);
}

TEST(ComputeRdm, EqualRowsAreZeroUnderBothMetrics) {
  const EmbeddingSet set(3, 4, {1, 2, 3, 5, 1, 2, 3, 5, 0, 1, 0, 1}, grid_manifest(1, 1, 3));
  for (Metric m : {Metric::Euclidean, Metric::PearsonDistance}) {
    const Rdm rdm = compute_rdm(set, m);
    EXPECT_EQ(rdm.at(0, 1), 0.0f) << metric_name(m);
    EXPECT_GT(rdm.at(0, 2), 0.0f);
  }
}

TEST(ComputeRdm, ZeroVarianceRowIsDistanceError) {
  const EmbeddingSet set(3, 3, {1, 2, 3, 7, 7, 7, 0, 1, 0}, grid_manifest(1, 1, 3));
  try {
    compute_rdm(set, Metric::PearsonDistance);
    FAIL();
  } catch (const DistanceError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(compute_rdm(set, Metric::Euclidean));
}

TEST(ComputeRdm, MatchesNaiveOracleSmall) {
  const EmbeddingSet set = test::random_set(2, 2, 5, 8, 17);
  for (Metric m : {Metric::Euclidean, Metric::PearsonDistance}) {
    expect_matches_naive(set, compute_rdm(set, m), 1e-6);
  }
}

TEST(ComputeRdm, MatchesNaiveOracleAcrossBlockSizesAndThreads) {
  const EmbeddingSet set = test::random_set(3, 4, 11, 33, 99);
  const Rdm reference = compute_rdm(set, Metric::Euclidean);
  expect_matches_naive(set, reference, 1e-6);
  for (std::size_t block : {1u, 7u, 64u, 1000u}) {
    for (unsigned threads : {1u, 3u}) {
      set_max_threads(threads);
      RdmOptions opts;
      opts.block_rows = block;
      const Rdm rdm = compute_rdm(set, Metric::Euclidean, opts);
      ASSERT_EQ(rdm.values().size(), reference.values().size());
      EXPECT_TRUE(std::equal(rdm.values().begin(), rdm.values().end(), reference.values().begin()))
          << "block " << block << " threads " << threads;
    }
  }
  set_max_threads(0);
}

TEST(ComputeRdm, ProgressReportsEveryPanel) {
  const EmbeddingSet set = test::random_set(1, 2, 10, 3, 1);
  RdmOptions opts;
  opts.block_rows = 4;
  std::vector<std::pair<std::size_t, std::size_t>> calls;
  opts.progress = [&](std::size_t done, std::size_t total) { calls.emplace_back(done, total); };
  compute_rdm(set, Metric::Euclidean, opts);
  ASSERT_EQ(calls.size(), 5u);
  EXPECT_EQ(calls.back(), std::make_pair(std::size_t(5), std::size_t(5)));
}

TEST(ComputeRdm, GroupsItemsByDiseaseThenSlide) {
  Manifest m;
  const char* spec[][2] = {{"B", "b1"}, {"A", "a1"}, {"B", "b2"}, {"A", "a2"}, {"B", "b1"}, {"A", "a1"}};
  for (std::size_t r = 0; r < 6; ++r) {
    m.rows.push_back({r, "p" + std::to_string(r), spec[r][1], spec[r][0], "m", 0, 0, 0});
  }
  Rng rng(3);
  const EmbeddingSet set(6, 2, test::random_floats(rng, 12), m);
  const Rdm rdm = compute_rdm(set, Metric::Euclidean);
  std::vector<std::uint64_t> order;
  for (const auto& row : rdm.labels().rows) order.push_back(row.row_index);
  EXPECT_EQ(order, (std::vector<std::uint64_t>{0, 4, 2, 1, 5, 3}));
  expect_matches_naive(set, rdm, 1e-6);
}

TEST(ComputeRdm, EuclideanMetricAxioms) {
  const EmbeddingSet set = test::random_set(1, 4, 10, 12, 8);
  const Rdm rdm = compute_rdm(set, Metric::Euclidean);
  for (float v : rdm.values()) EXPECT_GE(v, 0.0f);
  Rng rng(4);
  const std::size_t n = rdm.n_items();
  for (int t = 0; t < 1000; ++t) {
    const auto a = rng.uniform_below(n), b = rng.uniform_below(n), c = rng.uniform_below(n);
    EXPECT_LE(rdm.at(a, c), rdm.at(a, b) + rdm.at(b, c) + 1e-5);
  }
}

TEST(ComputeRdm, OrthogonalTransformAndTranslation) {
  const std::size_t d = 6;
  const EmbeddingSet set = test::random_set(2, 3, 5, d, 21);
  // Q = product of Givens rotations, t = fixed shift.
  std::vector<double> q(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) q[i * d + i] = 1.0;
  Rng rng(22);
  for (int g = 0; g < 20; ++g) {
    const std::size_t a = rng.uniform_below(d), b = (a + 1 + rng.uniform_below(d - 1)) % d;
    const double th = 6.283185307179586 * rng.uniform01();
    for (std::size_t r = 0; r < d; ++r) {
      const double qa = q[r * d + a], qb = q[r * d + b];
      q[r * d + a] = std::cos(th) * qa - std::sin(th) * qb;
      q[r * d + b] = std::sin(th) * qa + std::cos(th) * qb;
    }
  }
  std::vector<float> moved(set.data().size());
  for (std::size_t i = 0; i < set.n_items(); ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      double s = 3.5 - static_cast<double>(c);
      for (std::size_t k = 0; k < d; ++k) s += set.row(i)[k] * q[k * d + c];
      moved[i * d + c] = static_cast<float>(s);
    }
  }
  const Rdm a = compute_rdm(set, Metric::Euclidean);
  const Rdm b = compute_rdm(EmbeddingSet(set.n_items(), d, moved, set.manifest()), Metric::Euclidean);
  for (std::size_t k = 0; k < a.values().size(); ++k) {
    EXPECT_NEAR(b.values()[k], a.values()[k], 1e-5 * a.values()[k]);
  }
}

TEST(ComputeRdm, PositiveScalingScalesEuclidean) {
  const EmbeddingSet set = test::random_set(1, 3, 6, 9, 31);
  std::vector<float> scaled(set.data().begin(), set.data().end());
  for (auto& v : scaled) v *= 4.0f;
  const Rdm a = compute_rdm(set, Metric::Euclidean);
  const Rdm b = compute_rdm(EmbeddingSet(set.n_items(), set.dim(), scaled, set.manifest()), Metric::Euclidean);
  for (std::size_t k = 0; k < a.values().size(); ++k) EXPECT_NEAR(b.values()[k], 4.0 * a.values()[k], 1e-6 * b.values()[k]);
}

TEST(ComputeRdm, PearsonInvariantToRowAffineMaps) {
  const EmbeddingSet set = test::random_set(1, 3, 6, 9, 32);
  Rng rng(33);
  std::vector<float> mapped(set.data().begin(), set.data().end());
  for (std::size_t i = 0; i < set.n_items(); ++i) {
    const double a = 0.1 + 5.0 * rng.uniform01(), b = 10.0 * rng.normal();
    for (std::size_t k = 0; k < set.dim(); ++k) {
      mapped[i * set.dim() + k] = static_cast<float>(a * mapped[i * set.dim() + k] + b);
    }
  }
  const Rdm x = compute_rdm(set, Metric::PearsonDistance);
  const Rdm y = compute_rdm(EmbeddingSet(set.n_items(), set.dim(), mapped, set.manifest()), Metric::PearsonDistance);
  for (std::size_t k = 0; k < x.values().size(); ++k) EXPECT_NEAR(y.values()[k], x.values()[k], 1e-6);
}

TEST(ComputeRdm, PearsonRangeAndAntiCorrelation) {
  const EmbeddingSet set(2, 3, {1, 2, 3, 3, 2, 1}, grid_manifest(1, 1, 2));
  EXPECT_FLOAT_EQ(compute_rdm(set, Metric::PearsonDistance).values()[0], 2.0f);
}

TEST(Rdm, ConstructorValidates) {
  EXPECT_THROW(Rdm(Metric::Euclidean, {1, 2}, grid_manifest(1, 1, 3)), ValidationError);
  EXPECT_THROW(Rdm(Metric::Euclidean, {1, -2, 3}, grid_manifest(1, 1, 3)), ValidationError);
  EXPECT_THROW(Rdm(Metric::Euclidean, {1, NAN, 3}, grid_manifest(1, 1, 3)), ValidationError);
  EXPECT_THROW(Rdm(Metric::Euclidean, {}, grid_manifest(1, 1, 1)), ValidationError);
}

TEST(Rdm1, RoundTripAndLayout) {
  TempDir dir;
  const Rdm rdm(Metric::PearsonDistance, {0.5f, 1.0f, 2.0f}, grid_manifest(1, 1, 3));
  const std::string bytes = encode_rdm1(rdm);
  ASSERT_EQ(bytes.size(), 9u + 12u);
  EXPECT_EQ(bytes.substr(0, 4), "RDM1");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x03\x00\x00\x00", 4));
  EXPECT_EQ(bytes[8], '\x02');
  write_rdm(rdm, dir / "x.rdm1");
  const Rdm back = read_rdm(dir / "x.rdm1");
  EXPECT_EQ(back.metric(), Metric::PearsonDistance);
  EXPECT_EQ(back.labels(), rdm.labels());
  EXPECT_TRUE(std::equal(back.values().begin(), back.values().end(), rdm.values().begin()));
}

TEST(Rdm1, FormatErrors) {
  const Rdm rdm(Metric::Euclidean, {0.5f, 1.0f, 2.0f}, grid_manifest(1, 1, 3));
  const std::string bytes = encode_rdm1(rdm);
  EXPECT_THROW(decode_rdm1(bytes.substr(0, bytes.size() - 1), rdm.labels()), FormatError);
  std::string bad = bytes;
  bad[8] = 7;
  EXPECT_THROW(decode_rdm1(bad, rdm.labels()), FormatError);
  bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_rdm1(bad, rdm.labels()), FormatError);
  EXPECT_THROW(decode_rdm1(bytes, grid_manifest(1, 1, 2)), FormatError);
}

TEST(ParseMetric, Names) {
  EXPECT_EQ(parse_metric("euclidean"), Metric::Euclidean);
  EXPECT_EQ(parse_metric("pearson"), Metric::PearsonDistance);
  EXPECT_THROW(parse_metric("cosine"), ValidationError);
}

TEST(Render, DivideByMax) {
  const Rdm rdm(Metric::Euclidean, {2, 4, 6}, grid_manifest(1, 1, 3));
  const RenderedRdm img = normalize_rdm_unit(rdm);
  EXPECT_FLOAT_EQ(img.at(0, 1), 1.0f / 3.0f);
  EXPECT_FLOAT_EQ(img.at(0, 2), 2.0f / 3.0f);
  EXPECT_FLOAT_EQ(img.at(1, 2), 1.0f);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(img.at(i, i), 0.0f);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(img.at(i, j), img.at(j, i));
  }
}

TEST(Render, AllZero) {
  const RenderedRdm img = normalize_rdm_unit(Rdm(Metric::Euclidean, {0, 0, 0}, grid_manifest(1, 1, 3)));
  for (float p : img.pixels) EXPECT_EQ(p, 0.0f);
}

TEST(Render, RandomMaxIsOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Rdm rdm = compute_rdm(test::random_set(1, 2, 5, 3, seed), Metric::Euclidean);
    const RenderedRdm img = normalize_rdm_unit(rdm);
    EXPECT_EQ(*std::max_element(img.pixels.begin(), img.pixels.end()), 1.0f);
  }
}

TEST(Render, PgmBytes) {
  const RenderedRdm img = normalize_rdm_unit(Rdm(Metric::Euclidean, {2, 4, 6}, grid_manifest(1, 1, 3)));
  const std::string pgm = encode_pgm(img);
  const std::string header = "P5\n3 3\n255\n";
  ASSERT_EQ(pgm.size(), header.size() + 9);
  EXPECT_EQ(pgm.substr(0, header.size()), header);
  const auto px = [&](std::size_t i) { return static_cast<unsigned char>(pgm[header.size() + i]); };
  EXPECT_EQ(px(0), 0);
  EXPECT_EQ(px(1), 85);   // 255/3
  EXPECT_EQ(px(2), 170);  // 510/3
  EXPECT_EQ(px(5), 255);
}

}  // namespace
}  // namespace repsim
