#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xdc/clustering.hpp"
#include "xdc/config.hpp"
#include "xdc/dataset.hpp"
#include "xdc/engine.hpp"
#include "xdc/nn.hpp"

namespace xdc {

enum class ProbeMode { fc_only, full_finetune, scratch };

std::string to_string(ProbeMode m);

struct ProbeResult {
  ProbeMode mode = ProbeMode::fc_only;
  double top1_accuracy = 0.0;
  double best_lr = 0.0;
  std::vector<double> lr_set;
  std::vector<double> per_lr_accuracy;
  std::vector<double> diverged_lrs;  // scored 0 and flagged
};

// Trains a fresh linear head per LR on the frozen body's features over a
// stratified train split; reports held-out top-1. Best LR = highest accuracy,
// ties to the earlier entry. Body parameters are never touched.
ProbeResult linear_probe(const Encoder& enc, const std::vector<PairedSample>& data,
                         Modality modality, const TrainingSchedule& schedule,
                         const std::vector<double>& lr_set, double test_fraction,
                         std::uint64_t split_seed, std::uint64_t seed);

// Same protocol with the body unfrozen; each LR starts from a fresh copy of
// the encoder. Head seeds match linear_probe's so a zero-epoch schedule
// reproduces the frozen-random-head baseline exactly.
ProbeResult full_finetune(const Encoder& enc, const std::vector<PairedSample>& data,
                          Modality modality, const TrainingSchedule& schedule,
                          const std::vector<double>& lr_set, double test_fraction,
                          std::uint64_t split_seed, std::uint64_t seed);

struct ClusterReport {
  struct Entry {
    int cluster_id = 0;
    int size = 0;
    double purity = 0.0;  // max label fraction; undefined (0) when size == 0
    std::vector<std::pair<int, double>> top_labels;  // up to 5, by fraction desc
    std::vector<int> exemplar_ids;                   // ascending distance to centroid
  };
  std::vector<Entry> entries;  // every cluster id in [0, k)
  std::vector<int> ranking;    // non-empty cluster ids, purity desc, id asc on ties
  double nmi = 0.0;            // assignments vs true labels
};

// Per-cluster label fractions by exact counting; purity = max fraction;
// ranking covers non-empty clusters only.
ClusterReport cluster_purity(const std::vector<int>& assignments,
                             const std::vector<int>& true_labels, int k);

// Normalized mutual information, arithmetic-mean normalization, in [0,1].
// Symmetric bit-exactly; two constant arrays define NMI 1 (identical
// single-block partitions).
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// Row indices per cluster sorted by ascending distance to the centroid (ties
// to the lower row), truncated to per_cluster.
std::vector<std::vector<int>> exemplars(const ClusterModel& model, const FeatureMatrix& f,
                                        int per_cluster);

// Human-readable ranked table: rank, cluster id, size, purity, top-5
// "label(fraction)" pairs with two-decimal fractions.
std::string format_cluster_report(const ClusterReport& report, int top, int bottom);

struct SweepRow {
  std::string axis_value;
  bool ok = false;
  std::string error;  // set when !ok
  double probe_accuracy = 0.0;
  double finetune_accuracy = 0.0;
  double scratch_accuracy = 0.0;
  double nmi_vs_truth = 0.0;
  double mean_purity = 0.0;
  int iterations = 0;
};

enum class SweepAxis { regime, k };

SweepAxis parse_sweep_axis(const std::string& s);

// One full pipeline per value (shared base config and seed); row errors are
// recorded, not thrown. Rows keep the input value order.
std::vector<SweepRow> ablation_sweep(const ExperimentConfig& base, SweepAxis axis,
                                     const std::vector<std::string>& values,
                                     const std::vector<PairedSample>& data);

std::string sweep_csv(const std::vector<SweepRow>& rows, SweepAxis axis);

struct EvalSuite {
  ProbeResult probe;     // fc-only on the visual-slot encoder
  ProbeResult finetune;  // full finetune, same encoder
  ProbeResult scratch;   // fc-only on a fresh random body
  ClusterReport report;  // final visual-side clustering vs true labels
};

// Full downstream evaluation of a finished deep-clustering run.
EvalSuite evaluate_run(const DCRunResult& run, const std::vector<PairedSample>& data);

}  // namespace xdc
