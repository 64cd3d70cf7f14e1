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

// The `repsim` command line. Every subcommand writes its outputs plus a
// run_summary.json into an output directory; see README.md for usage.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "repsim/embedding_store.hpp"
#include "repsim/errors.hpp"
#include "repsim/hash.hpp"
#include "repsim/parallel.hpp"
#include "repsim/png_io.hpp"
#include "repsim/rdm.hpp"
#include "repsim/rsa_compare.hpp"
#include "repsim/specificity.hpp"
#include "repsim/spectral.hpp"
#include "repsim/stain_prep.hpp"
#include "repsim/synth_bench.hpp"

namespace repsim::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

inline constexpr const char* kVersion = "0.1.0";

/// Output bookkeeping shared by all subcommands.
class Run {
 public:
  Run(std::string command, fs::path out_dir, bool force, std::ostream& log,
      std::string summary_name = "run_summary.json")
      : command_(std::move(command)), out_dir_(std::move(out_dir)), force_(force), log_(log),
        summary_name_(std::move(summary_name)), start_(std::chrono::steady_clock::now()) {
    std::error_code ec;
    fs::create_directories(out_dir_, ec);
    if (ec) throw IoError("cannot create output directory " + out_dir_.string() + ": " + ec.message());
  }

  const fs::path& out_dir() const { return out_dir_; }
  std::ostream& log() { return log_; }

  void add_input(const fs::path& p) { inputs_.push_back(p.string()); }
  ojson& config() { return config_; }

  /// Path for an output file; refuses to clobber unless --force was given.
  fs::path claim(const std::string& name) {
    fs::path p = out_dir_ / name;
    if (fs::exists(p) && !force_) throw IoError("refusing to overwrite " + p.string() + " (pass --force)");
    claimed_.push_back(p);
    return p;
  }

  void write_text(const std::string& name, const std::string& text) {
    detail::write_file_bytes(claim(name), text);
  }

  void finish() {
    const fs::path summary_path = claim(summary_name_);
    claimed_.pop_back();
    ojson s;
    s["command"] = command_;
    s["version"] = kVersion;
    s["inputs"] = inputs_;
    s["config"] = config_;
    s["config_hash"] = Fnv1a64().update(config_.dump()).hex();
    s["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    auto& outputs = s["outputs"] = ojson::array();
    for (const auto& p : claimed_) {
      const std::string bytes = detail::read_file_bytes(p);
      outputs.push_back({{"path", p.filename().string()}, {"bytes", bytes.size()},
                         {"fnv1a64", Fnv1a64().update(bytes).hex()}});
    }
    detail::write_file_bytes(summary_path, s.dump(2) + "\n");
  }

 private:
  std::string command_;
  fs::path out_dir_;
  bool force_;
  std::ostream& log_;
  std::string summary_name_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> inputs_;
  std::vector<fs::path> claimed_;
  ojson config_ = ojson::object();
};

namespace detail {

inline std::pair<std::string, std::string> split_once(const std::string& s, char sep, const std::string& what) {
  const auto pos = s.find(sep);
  if (pos == std::string::npos || pos == 0 || pos + 1 == s.size()) {
    throw ValidationError("malformed " + what + " '" + s + "'");
  }
  return {s.substr(0, pos), s.substr(pos + 1)};
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(what + " must be a nonnegative integer, got '" + s + "'");
  }
}

inline nlohmann::json read_json_file(const fs::path& p) {
  try {
    return nlohmann::json::parse(repsim::detail::read_file_bytes(p));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline std::function<void(std::size_t, std::size_t)> progress_printer(std::ostream& log, const std::string& label,
                                                                      bool quiet) {
  if (quiet) return {};
  return [&log, label, last = std::size_t(0)](std::size_t done, std::size_t total) mutable {
    const std::size_t pct = total ? done * 100 / total : 100;
    if (pct >= last + 10 || done == total) {
      log << label << ": " << done << "/" << total << " panels\n";
      last = pct;
    }
  };
}

}  // namespace detail

struct GlobalOptions {
  std::string out;
  bool force = false;
  bool quiet = false;
  unsigned threads = 0;
};

inline void add_common(CLI::App* sub, GlobalOptions& g, bool out_required = true) {
  auto* opt = sub->add_option("--out", g.out, "Output directory");
  if (out_required) opt->required();
  sub->add_flag("--force", g.force, "Overwrite existing outputs");
  sub->add_flag("--quiet", g.quiet, "No progress output on stderr");
  sub->add_option("--threads", g.threads, "Cap on worker threads (default: REPSIM_THREADS or all cores)");
}

// ---------------------------------------------------------------------------

struct PlanArgs {
  std::string manifest;
  BatchPlanConfig cfg;
};

inline void cmd_plan_batches(const PlanArgs& a, Run& run) {
  run.add_input(a.manifest);
  run.config() = {{"manifest", a.manifest}, {"n_batches", a.cfg.n_batches},
                  {"wsis_per_disease_per_batch", a.cfg.wsis_per_disease_per_batch},
                  {"patches_per_wsi", a.cfg.patches_per_wsi}, {"seed", a.cfg.seed}};
  const Manifest manifest = read_manifest(a.manifest);
  validate_manifest(manifest);
  const BatchPlan plan = plan_batches(manifest, a.cfg);
  run.write_text("batch_plan.json", to_json(plan).dump(2) + "\n");
}

struct SynthArgs {
  std::string config;
  std::string out_file;
  std::optional<std::uint64_t> seed;
};

inline void cmd_synth(const SynthArgs& a, Run& run) {
  run.add_input(a.config);
  SynthConfig cfg = synth_config_from_json(detail::read_json_file(a.config));
  if (a.seed) cfg.seed = *a.seed;
  run.config() = to_json(cfg);
  const EmbeddingSet set = generate_synthetic(cfg);
  const std::string name = fs::path(a.out_file).filename().string();
  const fs::path emb = run.claim(name);
  run.claim(manifest_path_for(name).string());
  write_embedding_set(set, emb);
}

struct RdmArgs {
  std::string input;
  std::string metric = "euclidean";
  std::size_t block_rows = 0;
};

inline void cmd_rdm(const RdmArgs& a, Run& run, bool quiet) {
  run.add_input(a.input);
  const Metric metric = parse_metric(a.metric);
  run.config() = {{"input", a.input}, {"metric", metric_name(metric)}, {"block_rows", a.block_rows}};
  const EmbeddingSet set = read_embedding_set(a.input);
  if (!quiet) run.log() << "rdm: " << set.n_items() << " items x " << set.dim() << " dims\n";
  RdmOptions opts;
  opts.block_rows = a.block_rows;
  opts.progress = detail::progress_printer(run.log(), "rdm", quiet);
  const Rdm rdm = compute_rdm(set, metric, opts);
  const std::string name = fs::path(a.input).stem().string() + ".rdm1";
  const fs::path path = run.claim(name);
  run.claim(manifest_path_for(name).string());
  write_rdm(rdm, path);
}

struct RenderArgs {
  std::string input;
};

inline void cmd_render(const RenderArgs& a, Run& run) {
  run.add_input(a.input);
  run.config() = {{"input", a.input}, {"normalization", "global-max"}};
  const Rdm rdm = read_rdm(a.input);
  run.write_text(fs::path(a.input).stem().string() + ".pgm", encode_pgm(normalize_rdm_unit(rdm)));
}

struct CompareArgs {
  std::vector<std::string> rdms;  // MODEL:BATCH=PATH
  std::vector<std::string> baselines;
  std::string cluster_transform = "one-minus";
  std::string sides = "two-sided";
};

inline void cmd_compare(const CompareArgs& a, Run& run, bool quiet) {
  std::map<RdmKey, std::string> paths;
  for (const auto& spec : a.rdms) {
    const auto [key, path] = detail::split_once(spec, '=', "--rdm (expected MODEL:BATCH=PATH)");
    const auto pos = key.rfind(':');
    if (pos == std::string::npos || pos == 0) throw ValidationError("malformed --rdm key '" + key + "'");
    const RdmKey k{key.substr(0, pos), detail::parse_u64(key.substr(pos + 1), "batch id")};
    if (!paths.emplace(k, path).second) {
      throw ValidationError("duplicate --rdm for (model " + k.first + ", batch " + std::to_string(k.second) + ")");
    }
    run.add_input(path);
  }
  const ClusterTransform transform = parse_cluster_transform(a.cluster_transform);
  const Sides sides = parse_sides(a.sides);
  ojson inputs = ojson::array();
  for (const auto& [k, p] : paths) inputs.push_back({{"model", k.first}, {"batch", k.second}, {"path", p}});
  run.config() = {{"rdms", inputs}, {"baselines", a.baselines}, {"cluster_transform", a.cluster_transform},
                  {"sides", a.sides}};

  std::set<RdmKey> keys;
  for (const auto& [k, p] : paths) keys.insert(k);
  SimilarityOptions opts;
  opts.baseline_models.insert(a.baselines.begin(), a.baselines.end());
  auto load = [&](const RdmKey& k) {
    const std::string& p = paths.at(k);
    if (!fs::exists(p)) {
      throw CompletenessError("missing RDM for (model " + k.first + ", batch " + std::to_string(k.second) +
                              "): file not found: " + p);
    }
    if (!quiet) run.log() << "compare: ranking " << k.first << " batch " << k.second << "\n";
    return read_rdm(p);
  };
  const SimilarityReport report = build_similarity_report(keys, load, opts);
  const Linkage linkage = ward_linkage(report.mean, transform);

  std::string ttests = "model_a,model_b,sides,t_statistic,dof,p_value,n_pairs,note\n";
  for (std::size_t i = 0; i < report.model_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < report.model_ids.size(); ++j) {
      std::vector<double> x, y;
      for (const auto& row : report.cross_model_per_batch) {
        if (row[i] && row[j]) {
          x.push_back(*row[i]);
          y.push_back(*row[j]);
        }
      }
      std::string line = report.model_ids[i] + ',' + report.model_ids[j] + ',' + a.sides + ',';
      try {
        const auto t = paired_t_test(x, y, sides);
        char buf[96];
        std::snprintf(buf, sizeof buf, "%.10g,%zu,%.10g,%zu,", t.t_statistic, t.dof, t.p_value, t.n_pairs);
        line += buf;
      } catch (const Error& e) {
        line += ",,," + std::to_string(x.size()) + "," + e.kind();
      }
      ttests += line + '\n';
    }
  }

  run.write_text("similarity.json", to_json(report).dump(2) + "\n");
  run.write_text("similarity_pairs.csv", similarity_pairs_csv(report));
  run.write_text("model_means.csv", model_means_csv(report));
  run.write_text("linkage.json", to_json(linkage, report.model_ids).dump(2) + "\n");
  run.write_text("linkage.nwk", to_newick(linkage, report.model_ids) + "\n");
  run.write_text("ttests.csv", ttests);
}

struct SpecificityArgs {
  std::vector<std::string> rdms;  // BATCH=PATH
  std::string model = "model";
  std::string grouping = "both";
  bool inter_within_disease = false;
};

inline void cmd_specificity(const SpecificityArgs& a, Run& run, bool quiet) {
  std::map<std::uint64_t, std::string> paths;
  for (const auto& spec : a.rdms) {
    const auto [batch, path] = detail::split_once(spec, '=', "--rdm (expected BATCH=PATH)");
    const auto b = detail::parse_u64(batch, "batch id");
    if (!paths.emplace(b, path).second) throw ValidationError("duplicate --rdm for batch " + batch);
    run.add_input(path);
  }
  if (a.grouping != "slide" && a.grouping != "disease" && a.grouping != "both") {
    throw ValidationError("unknown grouping '" + a.grouping + "' (expected slide|disease|both)");
  }
  ojson inputs = ojson::array();
  for (const auto& [b, p] : paths) inputs.push_back({{"batch", b}, {"path", p}});
  run.config() = {{"model", a.model}, {"rdms", inputs}, {"grouping", a.grouping},
                  {"inter_within_disease", a.inter_within_disease}};

  std::vector<GroupingSpec> groupings;
  if (a.grouping != "disease") {
    GroupingSpec g = GroupingSpec::slide();
    g.inter_within_disease_only = a.inter_within_disease;
    groupings.push_back(g);
  }
  if (a.grouping != "slide") groupings.push_back(GroupingSpec::disease());

  std::vector<std::uint64_t> ids;
  for (const auto& [b, p] : paths) ids.push_back(b);
  std::string csv = specificity_csv_header();
  ojson report;
  report["model"] = a.model;
  auto& results = report["results"] = ojson::array();
  // One RDM is resident at a time; each is loaded once per grouping.
  for (const auto& g : groupings) {
    auto load = [&](std::uint64_t b) {
      if (!quiet) run.log() << "specificity: " << grouping_name(g.kind) << " batch " << b << "\n";
      return read_rdm(paths.at(b));
    };
    const CliffsResult r = specificity_report(ids, load, g);
    csv += specificity_csv_row(a.model, r);
    results.push_back(to_json(r));
  }
  run.write_text("specificity.csv", csv);
  run.write_text("specificity.json", report.dump(2) + "\n");
}

struct SpectralArgs {
  std::vector<std::string> inputs;  // [MODEL=]PATH
  std::string mass = "singular";
  std::size_t block_rows = 4096;
};

inline void cmd_spectral(const SpectralArgs& a, Run& run, bool quiet) {
  const SpectrumMass mass = parse_spectrum_mass(a.mass);
  std::vector<std::pair<std::string, std::string>> models;
  std::set<std::string> seen;
  for (const auto& spec : a.inputs) {
    const auto pos = spec.find('=');
    std::pair<std::string, std::string> m =
        pos == std::string::npos ? std::pair{fs::path(spec).stem().string(), spec}
                                 : detail::split_once(spec, '=', "--in (expected [MODEL=]PATH)");
    if (!seen.insert(m.first).second) throw ValidationError("duplicate model name '" + m.first + "'");
    run.add_input(m.second);
    models.push_back(std::move(m));
  }
  ojson inputs = ojson::array();
  for (const auto& [m, p] : models) inputs.push_back({{"model", m}, {"path", p}});
  run.config() = {{"inputs", inputs}, {"mass", a.mass}, {"block_rows", a.block_rows}};

  std::vector<std::pair<std::string, Spectrum>> spectra;
  ojson all = ojson::object();
  for (const auto& [model, path] : models) {
    if (!quiet) run.log() << "spectral: " << model << "\n";
    Spectrum s = spectrum_from_file(path, mass, a.block_rows);
    run.write_text(model + "_curve.csv", curve_csv(s));
    all[model] = to_json(s);
    spectra.emplace_back(model, std::move(s));
  }
  run.write_text("spectral_curves.csv", combined_curve_csv(spectra));
  run.write_text("spectrum.json", all.dump(2) + "\n");
}

struct SampleArgs {
  std::string thumb;
  std::size_t n = 50;
  std::uint64_t seed = 0;
  std::size_t patch_px = kDefaultPatchPx;
  bool with_replacement = false;
};

inline void cmd_sample_patches(const SampleArgs& a, Run& run) {
  run.add_input(a.thumb);
  run.config() = {{"thumb", a.thumb}, {"n", a.n}, {"seed", a.seed}, {"patch_px", a.patch_px},
                  {"with_replacement", a.with_replacement}};
  const GrayThumbnail thumb{read_gray_image(a.thumb), a.patch_px};
  const ForegroundMask mask = foreground_mask(thumb);
  const auto coords = sample_patch_coords(mask, a.n, a.patch_px, a.seed, a.with_replacement);
  std::string tsv = "patch_index\tx\ty\n";
  for (std::size_t i = 0; i < coords.size(); ++i) {
    tsv += std::to_string(i) + '\t' + std::to_string(coords[i].x) + '\t' + std::to_string(coords[i].y) + '\n';
  }
  run.write_text("patches.tsv", tsv);
  GrayImage mask_img{mask.width, mask.height, mask.bits};
  for (auto& v : mask_img.pixels) v = v ? 255 : 0;
  run.write_text("foreground_mask.pgm", encode_pgm(mask_img));
  run.config()["otsu_threshold"] = mask.threshold;
  run.config()["foreground_pixels"] = mask.count();
}

struct StainArgs {
  std::string in_dir;
  std::string reference;  // image or JSON; empty = built-in target
  MacenkoOptions opts;
};

inline void cmd_stain_normalize(const StainArgs& a, Run& run, bool quiet) {
  run.add_input(a.in_dir);
  StainParams reference = reference_stain_params();
  std::string reference_kind = "builtin";
  if (!a.reference.empty()) {
    run.add_input(a.reference);
    if (fs::path(a.reference).extension() == ".json") {
      reference = stain_params_from_json(detail::read_json_file(a.reference));
      reference_kind = "json";
    } else {
      reference = estimate_stain_matrix(read_rgb_image(a.reference), a.opts);
      reference_kind = "image";
    }
  }
  run.config() = {{"in", a.in_dir}, {"reference", a.reference}, {"reference_kind", reference_kind},
                  {"io", a.opts.io}, {"alpha", a.opts.alpha}, {"beta", a.opts.beta},
                  {"reference_params", to_json(reference)}};
  if (!fs::is_directory(a.in_dir)) throw IoError("not a directory: " + a.in_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(a.in_dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".png" || ext == ".ppm" || ext == ".pgm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  ojson failures = ojson::array();
  std::size_t done = 0;
  for (const auto& f : files) {
    try {
      const RgbImage img = read_rgb_image(f);
      const StainParams source = estimate_stain_matrix(img, a.opts);
      const RgbImage out = normalize_stain(img, source, reference);
      write_rgb_image(out, run.claim(f.filename().string()));
      ++done;
    } catch (const Error& e) {
      failures.push_back({{"file", f.filename().string()}, {"error", e.kind()}, {"message", e.what()}});
    }
    if (!quiet) run.log() << "stain-normalize: " << (done + failures.size()) << "/" << files.size() << "\n";
  }
  ojson report;
  report["normalized"] = done;
  report["failures"] = failures;
  run.write_text("stain_report.json", report.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

/// Runs the CLI. Returns the process exit status: 0 success, 1 failure
/// with a JSON error object on `err`, 2 usage error.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"repsim: representational similarity analysis toolkit", "repsim"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  GlobalOptions g;

  PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan-batches", "Assign slides to disjoint batches");
  plan_cmd->add_option("--manifest", plan.manifest, "Manifest TSV")->required();
  plan_cmd->add_option("--n-batches", plan.cfg.n_batches, "Number of batches");
  plan_cmd->add_option("--wsis", plan.cfg.wsis_per_disease_per_batch, "Slides per disease per batch");
  plan_cmd->add_option("--patches", plan.cfg.patches_per_wsi, "Patches per slide");
  plan_cmd->add_option("--seed", plan.cfg.seed, "PRNG seed");
  add_common(plan_cmd, g);

  SynthArgs synth;
  std::uint64_t synth_seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic embedding set");
  synth_cmd->add_option("--config", synth.config, "Synthetic config JSON")->required();
  synth_cmd->add_option("--out", synth.out_file, "Output EMB1 path")->required();
  auto* seed_opt = synth_cmd->add_option("--seed", synth_seed, "Override the config seed");
  synth_cmd->add_flag("--force", g.force, "Overwrite existing outputs");
  synth_cmd->add_flag("--quiet", g.quiet, "No progress output");
  synth_cmd->add_option("--threads", g.threads, "Thread cap");

  RdmArgs rdm;
  auto* rdm_cmd = app.add_subcommand("rdm", "Compute a condensed RDM from an embedding set");
  rdm_cmd->add_option("--in", rdm.input, "Input EMB1 file")->required();
  rdm_cmd->add_option("--metric", rdm.metric, "euclidean|pearson")->check(CLI::IsMember({"euclidean", "pearson"}));
  rdm_cmd->add_option("--block-rows", rdm.block_rows, "Rows per panel (0 = automatic)");
  add_common(rdm_cmd, g);

  RenderArgs render;
  auto* render_cmd = app.add_subcommand("render-rdm", "Render an RDM as an 8-bit PGM heatmap");
  render_cmd->add_option("--in", render.input, "Input RDM1 file")->required();
  add_common(render_cmd, g);

  CompareArgs compare;
  auto* compare_cmd = app.add_subcommand("compare", "Spearman similarity of RDMs across models and batches");
  compare_cmd->add_option("--rdm", compare.rdms, "MODEL:BATCH=PATH (repeatable)")->required();
  compare_cmd->add_option("--baseline", compare.baselines, "Model excluded from cross-model means (repeatable)");
  compare_cmd->add_option("--cluster-transform", compare.cluster_transform, "one-minus|arccos")
      ->check(CLI::IsMember({"one-minus", "arccos"}));
  compare_cmd->add_option("--sides", compare.sides, "two-sided|less|greater")
      ->check(CLI::IsMember({"two-sided", "less", "greater"}));
  add_common(compare_cmd, g);

  SpecificityArgs spec;
  auto* spec_cmd = app.add_subcommand("specificity", "Slide / disease specificity via Cliff's delta");
  spec_cmd->add_option("--rdm", spec.rdms, "BATCH=PATH (repeatable)")->required();
  spec_cmd->add_option("--model", spec.model, "Model name for the report");
  spec_cmd->add_option("--grouping", spec.grouping, "slide|disease|both")
      ->check(CLI::IsMember({"slide", "disease", "both"}));
  spec_cmd->add_flag("--inter-within-disease", spec.inter_within_disease,
                     "Slide grouping: compare only against other slides of the same disease");
  add_common(spec_cmd, g);

  SpectralArgs spectral;
  auto* spectral_cmd = app.add_subcommand("spectral", "Normalised singular-value spectrum per model");
  spectral_cmd->add_option("--in", spectral.inputs, "[MODEL=]PATH to EMB1 (repeatable)")->required();
  spectral_cmd->add_option("--mass", spectral.mass, "singular|variance")
      ->check(CLI::IsMember({"singular", "variance"}));
  spectral_cmd->add_option("--block-rows", spectral.block_rows, "Rows per streamed block");
  add_common(spectral_cmd, g);

  SampleArgs sample;
  auto* sample_cmd = app.add_subcommand("sample-patches", "Otsu foreground + seeded patch sampling");
  sample_cmd->add_option("--thumb", sample.thumb, "Grayscale or RGB thumbnail (PNG/PNM)")->required();
  sample_cmd->add_option("--n", sample.n, "Patches to sample");
  sample_cmd->add_option("--seed", sample.seed, "PRNG seed");
  sample_cmd->add_option("--patch-px", sample.patch_px, "Patch size = thumbnail downsample factor");
  sample_cmd->add_flag("--with-replacement", sample.with_replacement, "Allow repeated positions");
  add_common(sample_cmd, g);

  StainArgs stain;
  auto* stain_cmd = app.add_subcommand("stain-normalize", "Macenko-normalise a directory of RGB patches");
  stain_cmd->add_option("--in", stain.in_dir, "Input directory of PNG/PPM patches")->required();
  stain_cmd->add_option("--reference", stain.reference, "Reference patch image or stain-params JSON");
  stain_cmd->add_option("--io", stain.opts.io, "Transmitted light intensity");
  stain_cmd->add_option("--alpha", stain.opts.alpha, "Angle percentile");
  stain_cmd->add_option("--beta", stain.opts.beta, "Optical density floor");
  add_common(stain_cmd, g);

  std::vector<const char*> argv;
  argv.push_back("repsim");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  if (g.threads > 0) set_max_threads(g.threads);
  const char* name = app.get_subcommands().front()->get_name().c_str();
  try {
    if (synth_cmd->parsed()) {
      if (*seed_opt) synth.seed = synth_seed;
      fs::path out_dir = fs::path(synth.out_file).parent_path();
      if (out_dir.empty()) out_dir = ".";
      Run r("synth", out_dir, g.force, err, fs::path(synth.out_file).filename().string() + ".run_summary.json");
      cmd_synth(synth, r);
      r.finish();
      return 0;
    }
    // Commands with a single named product keep one summary per product so
    // that several runs can share an output directory.
    std::string summary = "run_summary.json";
    if (rdm_cmd->parsed()) summary = fs::path(rdm.input).stem().string() + ".rdm1.run_summary.json";
    if (render_cmd->parsed()) summary = fs::path(render.input).stem().string() + ".pgm.run_summary.json";
    Run r(name, g.out, g.force, err, summary);
    if (plan_cmd->parsed()) cmd_plan_batches(plan, r);
    else if (rdm_cmd->parsed()) cmd_rdm(rdm, r, g.quiet);
    else if (render_cmd->parsed()) cmd_render(render, r);
    else if (compare_cmd->parsed()) cmd_compare(compare, r, g.quiet);
    else if (spec_cmd->parsed()) cmd_specificity(spec, r, g.quiet);
    else if (spectral_cmd->parsed()) cmd_spectral(spectral, r, g.quiet);
    else if (sample_cmd->parsed()) cmd_sample_patches(sample, r);
    else if (stain_cmd->parsed()) cmd_stain_normalize(stain, r, g.quiet);
    r.finish();
    set_max_threads(0);
    return 0;
  } catch (const Error& e) {
    set_max_threads(0);
    err << ojson{{"error", e.kind()}, {"command", name}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    set_max_threads(0);
    err << ojson{{"error", "internal"}, {"command", name}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
}

inline int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(std::move(args));
}

}  // namespace repsim::cli
