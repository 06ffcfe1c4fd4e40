// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver for the explanation-ensembling pipeline. Talks to the
// shared library exclusively through the C API.

#include <CLI11.hpp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "xaiens/xaiens_c.h"

namespace {

struct PipelineDeleter {
  void operator()(xe_pipeline* p) const { xe_pipeline_free(p); }
};
using PipelinePtr = std::unique_ptr<xe_pipeline, PipelineDeleter>;

int fail_with(xe_status status) {
  std::fprintf(stderr, "error: %s: %s\n", xe_status_name(status), xe_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CNN-based explanation ensembling pipeline"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir, preset, fusion;
  std::string seed_str, cutoff_str;
  app.add_option("--config", config_path, "pipeline configuration file")
      ->required()
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed_str, "override the global seed");
  app.add_option("--out", out_dir, "override the output directory");
  app.add_option("--preset", preset,
                 "override the explanation preset (baseline0|local3|cited4|diverse7)");
  app.add_option("--fusion", fusion, "override the fusion mode (concat|sum|channel)");
  app.add_option("--cutoff", cutoff_str, "override the binarization cut-off");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"synth", "generate the synthetic shapes dataset"},
      {"train-classifier", "train the toy classifier"},
      {"explain", "populate the explanation cache"},
      {"train-ensembler", "train the explanation-fusion model"},
      {"eval", "emit performance, derived and quality metrics"},
      {"ablate", "run the disable-one-explanation study"},
      {"report", "collect plot-data bundle from eval outputs"},
      {"run", "run every stage in order"},
  };
  for (const auto& [name, help] : stages) app.add_subcommand(name, help);

  bool print_digest = false;
  app.add_flag("--print-digest", print_digest,
               "print the effective config digest before running");

  CLI11_PARSE(app, argc, argv);

  xe_pipeline* raw = nullptr;
  if (xe_status s = xe_pipeline_open(config_path.c_str(), &raw); s != XE_OK)
    return fail_with(s);
  PipelinePtr pipeline(raw);

  const std::vector<std::pair<std::string, std::string>> overrides = {
      {"seed", seed_str},
      {"out", out_dir},
      {"explain.preset", preset},
      {"ensembler.fusion", fusion},
      {"ensembler.cutoff", cutoff_str},
  };
  for (const auto& [key, value] : overrides) {
    if (value.empty()) continue;
    if (xe_status s = xe_pipeline_set(pipeline.get(), key.c_str(), value.c_str());
        s != XE_OK)
      return fail_with(s);
  }

  char digest[64];
  if (xe_status s = xe_pipeline_config_digest(pipeline.get(), digest, sizeof(digest));
      s != XE_OK)
    return fail_with(s);
  if (print_digest) std::printf("config_digest=%s\n", digest);

  for (const auto* sub : app.get_subcommands()) {
    if (xe_status s = xe_pipeline_run(pipeline.get(), sub->get_name().c_str());
        s != XE_OK)
      return fail_with(s);
  }
  return 0;
}
