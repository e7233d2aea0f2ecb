#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spangrad/model_config.hpp"
#include "spangrad/training.hpp"

namespace spangrad {

// One comparison inside an experiment; only gradient-method fields differ
// between runs.
struct RunSpec {
  std::string label;
  GradMethod method = GradMethod::standard;
  ScaleConfig scales;
  SimplestScales simplest;
  BlockGradMode mode = BlockGradMode::routed;
  QKVModulation modulation;

  static RunSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  // The shared model config with this run's gradient settings applied.
  ModelConfig apply(const ModelConfig& base) const;
};

struct SyntheticCorpus {
  std::size_t bytes = 1 << 20;
  std::uint64_t seed = 2024;
};

struct ExperimentSpec {
  std::string label = "experiment";
  ModelConfig model;
  TrainConfig train;
  std::optional<std::filesystem::path> corpus_path;
  std::optional<SyntheticCorpus> synthetic_corpus;  // used when no path
  double validation_fraction = 0.1;
  bool save_checkpoints = false;  // final weights to <run>/model.ckpt
  std::vector<RunSpec> runs;

  // Relative corpus paths resolve against `base_dir`.
  static ExperimentSpec from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {});
  static ExperimentSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

struct RunOutcome {
  RunSpec run;
  MetricsLog log;
  bool completed = false;
  bool diverged = false;
  std::string error;
  double min_validation_loss = 0.0;  // +inf when no validation pass finished
};

struct SummaryRow {
  std::string label;
  std::string method;
  std::string scales;
  double min_val_loss = 0.0;
  std::optional<double> delta_pct_vs_standard;
};

struct ExperimentResult {
  std::vector<RunOutcome> runs;
  std::vector<SummaryRow> summary;
  bool all_completed() const;
};

// (L_standard - L_run) / L_standard * 100: positive means the run reached a
// lower validation loss than the standard run.
double delta_pct(double standard_loss, double run_loss);

// Runs every comparison on identical data and seed, writing
//   <out>/spec.json, <out>/<run>/metrics.csv, <out>/<run>/manifest.json,
//   <out>/summary.csv, <out>/summary.json.
// A diverged or failed run is recorded and the remaining runs continue.
ExperimentResult run_experiment(const ExperimentSpec& spec,
                                const std::filesystem::path& out_dir,
                                std::ostream* progress = nullptr);

std::string_view version_string();

}  // namespace spangrad
