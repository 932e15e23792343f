#pragma once

#include <string>
#include <vector>

#include "xdc/config.hpp"
#include "xdc/dataset.hpp"
#include "xdc/engine.hpp"
#include "xdc/eval.hpp"

namespace xdc {

struct RunManifest {
  int format_version = 1;
  std::string config_text;  // normalized snapshot, re-parsable
  std::vector<DCIterationRecord> iterations;
  EvalSuite eval;
  double wall_clock_seconds = 0.0;
  std::vector<std::string> artifacts;  // files written, relative to the run dir
};

struct RunOutcome {
  DCRunResult run;
  EvalSuite eval;
  RunManifest manifest;
  std::string metrics_json;  // deterministic metrics section, as written
};

// Dataset per config: load dataset_path when set, else generate.
std::vector<PairedSample> obtain_dataset(const ExperimentConfig& cfg);

// cmd_run: generate/load -> run_deep_clustering -> evaluation -> artifacts
// (config.txt, metrics.json, manifest.json, final + per-iteration checkpoints,
// per-iteration assignment CSVs, cluster report). Refuses to reuse a non-empty
// output dir unless force. Returns the outcome after writing everything.
RunOutcome cmd_run(const ExperimentConfig& cfg, bool force);

// Manifest summary of a finished run dir; throws naming the missing file.
std::string cmd_report(const std::string& run_dir);

// Ranked cluster table (top/bottom N) from a finished run dir.
std::string cmd_inspect_clusters(const std::string& run_dir, int top, int bottom);

// Sweep over an axis; writes results.csv and results.json under out_dir.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& base, SweepAxis axis,
                                const std::vector<std::string>& values,
                                const std::string& out_dir, bool force);

}  // namespace xdc
