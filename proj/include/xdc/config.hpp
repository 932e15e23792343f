#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xdc/clustering.hpp"
#include "xdc/dataset.hpp"
#include "xdc/error.hpp"
#include "xdc/nn.hpp"
#include "xdc/regime.hpp"

namespace xdc {

struct EvalSettings {
  std::vector<double> lr_full = {0.001, 0.002, 0.004, 0.006, 0.008, 0.01};
  std::vector<double> lr_fc = {0.001, 0.002, 0.004, 0.006, 0.008, 0.01, 0.02, 0.04};
  double test_fraction = 0.2;
  std::uint64_t split_seed = 17;

  bool operator==(const EvalSettings&) const = default;
};

struct ExperimentConfig {
  Regime regime = Regime::xdc;
  int k = 16;
  std::uint64_t run_seed = 1;
  std::string output_dir = "xdc-run";
  int max_dc_iterations = 6;
  double agreement_stop = 0.95;
  double val_split = 0.1;

  GeneratorSpec generator;
  std::string dataset_path;  // empty → use the generator

  std::vector<int> visual_hidden_dims = {64, 32};
  std::vector<int> audio_hidden_dims = {64, 32};

  TrainingSchedule pretrain;   // stock TrainingSchedule defaults
  TrainingSchedule finetune{.epoch_size = 2000,
                            .batch_size = 32,
                            .base_lr = 0.01,
                            .warmup_epochs = 2,
                            .step_epochs = 2,
                            .lr_decay = 0.01,
                            .total_epochs = 8,
                            .weight_decay = 0.005,
                            .early_stop = false,
                            .early_stop_patience = 3,
                            .momentum = 0.9};
  KMeansOptions kmeans;
  EvalSettings eval;
  bool normalize_features = false;  // per-modality l2 before clustering, all regimes
  bool whiten_features = false;     // PCA-whitening before clustering

  bool operator==(const ExperimentConfig&) const = default;
};

// Throws ConfigError naming the offending field.
void validate_config(const ExperimentConfig& cfg);

// Flat "dotted.key = value" text (# comments, blank lines ok). A leading '{'
// switches to the JSON reading of the same schema. Unknown keys are rejected
// by name. Values are validated before returning.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Apply one "dotted.key=value" override (CLI --set).
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Canonical flat-text emission: every key, fixed order, %.17g reals.
// parse_config_text(emit_config(c)) == c.
std::string emit_config(const ExperimentConfig& cfg);

}  // namespace xdc
