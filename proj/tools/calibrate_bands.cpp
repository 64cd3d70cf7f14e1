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

// Monte Carlo calibration of the synthetic acceptance bands. Prints one
// JSON object per scenario with the sample mean, standard deviation,
// extremes and the band mean +/- k sd.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "repsim/parallel.hpp"
#include "repsim/rdm.hpp"
#include "repsim/rsa_compare.hpp"
#include "repsim/specificity.hpp"
#include "repsim/synth_bench.hpp"

namespace {

using repsim::SynthConfig;

double slide_delta(const SynthConfig& cfg) {
  const auto rdm = repsim::compute_rdm(repsim::generate_synthetic(cfg), repsim::Metric::Euclidean);
  return repsim::batch_specificity(rdm, repsim::GroupingSpec::slide()).delta;
}

double independent_rho(SynthConfig a) {
  SynthConfig b = a;
  b.sigma_disease = 0.0;
  b.sigma_slide = 0.0;
  b.seed = a.seed ^ 0x9e3779b97f4a7c15ULL;
  const auto ra = repsim::compute_rdm(repsim::generate_synthetic(a), repsim::Metric::Euclidean);
  const auto rb = repsim::compute_rdm(repsim::generate_synthetic(b), repsim::Metric::Euclidean);
  return repsim::spearman(ra, rb);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monte Carlo calibration of synthetic acceptance bands"};
  std::string scenario = "slide";
  std::size_t n_seeds = 100, diseases = 4, slides = 10, patches = 10, dim = 64;
  std::uint64_t seed_base = 1'000'000;
  double sigma_slide = 1.0, sigma_noise = 1.0, k = 5.0;
  app.add_option("--scenario", scenario, "slide|independent")->check(CLI::IsMember({"slide", "independent"}));
  app.add_option("--seeds", n_seeds, "Number of seeds");
  app.add_option("--seed-base", seed_base, "First seed");
  app.add_option("--diseases", diseases);
  app.add_option("--slides", slides);
  app.add_option("--patches", patches);
  app.add_option("--dim", dim);
  app.add_option("--sigma-slide", sigma_slide);
  app.add_option("--sigma-noise", sigma_noise);
  app.add_option("--k", k, "Band half-width in standard deviations");
  CLI11_PARSE(app, argc, argv);

  SynthConfig cfg;
  cfg.n_diseases = diseases;
  cfg.slides_per_disease = slides;
  cfg.patches_per_slide = patches;
  cfg.dim = dim;
  cfg.sigma_slide = sigma_slide;
  cfg.sigma_noise = sigma_noise;

  std::vector<double> values(n_seeds);
  for (std::size_t s = 0; s < n_seeds; ++s) {
    cfg.seed = seed_base + s;
    values[s] = scenario == "slide" ? slide_delta(cfg) : independent_rho(cfg);
    std::fprintf(stderr, "seed %llu: %.10f\n", static_cast<unsigned long long>(cfg.seed), values[s]);
  }
  double mean = 0, lo = values[0], hi = values[0];
  for (double v : values) {
    mean += v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  mean /= static_cast<double>(n_seeds);
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = n_seeds > 1 ? std::sqrt(ss / static_cast<double>(n_seeds - 1)) : 0.0;

  nlohmann::ordered_json out = {{"scenario", scenario}, {"config", repsim::to_json(cfg)}, {"seeds", n_seeds},
                                {"seed_base", seed_base}, {"mean", mean}, {"sd", sd}, {"min", lo}, {"max", hi},
                                {"k", k}, {"band_lo", std::max(-1.0, mean - k * sd)},
                                {"band_hi", std::min(1.0, mean + k * sd)}};
  out["config"].erase("seed");
  std::cout << out.dump(2) << "\n";
  return 0;
}
