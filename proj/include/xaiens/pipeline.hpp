// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xaiens/config.hpp"

namespace xaiens::pipeline {

/// Ordered stage names accepted by run_stage.
const std::vector<std::string>& stage_names();

/// Validates the configuration (unknown keys are configuration errors) and
/// returns its digest.
std::string validate_config(const Config& cfg);

void cmd_synth(const Config& cfg);
void cmd_train_classifier(const Config& cfg);
void cmd_explain(const Config& cfg);
void cmd_train_ensembler(const Config& cfg);
void cmd_eval(const Config& cfg);
void cmd_ablate(const Config& cfg);
void cmd_report(const Config& cfg);

/// Dispatches one stage by CLI name ("synth", "train-classifier", ...), or
/// the whole pipeline for "run".
void run_stage(const Config& cfg, const std::string& stage);

// Artifact locations under the configured output directory.
struct RunPaths {
  std::filesystem::path out;

  std::filesystem::path dataset() const { return out / "dataset"; }
  std::filesystem::path classifier() const { return out / "classifier.ckpt"; }
  std::filesystem::path cache() const { return out / "cache"; }
  std::filesystem::path ensembler() const { return out / "ensembler.ckpt"; }
  std::filesystem::path history() const { return out / "history.csv"; }
  std::filesystem::path metrics() const { return out / "metrics"; }
  std::filesystem::path table1() const { return metrics() / "table1.csv"; }
  std::filesystem::path derived() const { return metrics() / "derived.csv"; }
  std::filesystem::path per_image() const { return metrics() / "per_image.csv"; }
  std::filesystem::path baselines() const {
    return metrics() / "explanation_baselines.csv";
  }
  std::filesystem::path radar() const { return metrics() / "radar.csv"; }
  std::filesystem::path curves() const { return metrics() / "curves.csv"; }
  std::filesystem::path table2() const { return metrics() / "table2.csv"; }
  std::filesystem::path report() const { return out / "report"; }
};

}  // namespace xaiens::pipeline
