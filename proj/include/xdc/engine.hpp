#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "xdc/clustering.hpp"
#include "xdc/config.hpp"
#include "xdc/dataset.hpp"
#include "xdc/nn.hpp"

namespace xdc {

// Seed streams carved out of run_seed via derive_seed(run_seed, stream, ...).
inline constexpr std::uint64_t kStreamEncoderInit = 1;
inline constexpr std::uint64_t kStreamCluster = 2;
inline constexpr std::uint64_t kStreamTrain = 3;
inline constexpr std::uint64_t kStreamHeadReset = 4;
inline constexpr std::uint64_t kStreamValSplit = 5;
inline constexpr std::uint64_t kStreamEvaluation = 6;

// Input modality each encoder slot reads; the same-modality variants point
// both slots at one modality.
Modality visual_slot_modality(Regime r);
Modality audio_slot_modality(Regime r);

const std::vector<double>& sample_input(const PairedSample& s, Modality m);
int raw_dim(const GeneratorSpec& g, Modality m);

// Head set carried by every encoder under a regime.
std::vector<HeadId> regime_heads(Regime r);

FeatureMatrix extract_features(const Encoder& enc, const std::vector<PairedSample>& data,
                               Modality modality, FeatureTag tag);

// Uniform-over-cluster batch stream: each draw picks a cluster uniformly, then
// a member uniformly (with replacement). Emits ceil(epoch_size / batch_size)
// batches per epoch, epoch_size draws total.
class EpochSampler {
 public:
  EpochSampler(const std::vector<int>& labels, const std::vector<int>& eligible_rows,
               int epoch_size, int batch_size, std::uint64_t seed);
  // Next batch of dataset row indices; empty once the epoch is exhausted.
  std::vector<int> next_batch();
  void reset_epoch();

 private:
  std::vector<std::vector<int>> members_;  // rows per cluster, ascending
  std::vector<int> nonempty_;              // cluster ids with members, ascending
  int epoch_size_;
  int batch_size_;
  int drawn_ = 0;
  Rng rng_;
};

struct TrainResult {
  std::vector<double> train_losses;  // per epoch, mean over batches
  std::vector<double> val_losses;    // per epoch
  int epochs_ran = 0;
  // Largest fraction of validation samples mapped to one predicted class by
  // any head after training (trivial-solution monitor).
  double max_predicted_class_fraction = 0.0;
};

// SGD on pseudo-labels: per batch the loss is the unweighted sum of every
// head's cross-entropy (mean over the batch); heads share the body. Fresh
// momentum state per call. Early-stops on rising validation loss when the
// schedule says so. Throws TrainingDivergence on non-finite loss.
TrainResult train_on_pseudo_labels(Encoder& enc, const std::vector<PairedSample>& data,
                                   Modality modality,
                                   const std::vector<PseudoLabelSet::HeadLabels>& labels,
                                   const TrainingSchedule& schedule,
                                   const std::vector<int>& train_rows,
                                   const std::vector<int>& val_rows, std::uint64_t seed);

struct DCIterationRecord {
  int iteration_index = 0;
  PseudoLabelSet pseudo_labels;
  TrainResult visual_train;
  TrainResult audio_train;
  std::vector<double> kmeans_inertia;         // per fit, visual/audio or joint order
  std::vector<int> kmeans_reassignments;      // aligned with kmeans_inertia
  double visual_agreement_with_previous = 0;  // permutation-matched; 0 on iter 0
  double audio_agreement_with_previous = 0;
};

struct DCRunResult {
  Encoder visual_encoder;
  Encoder audio_encoder;
  std::vector<DCIterationRecord> records;
  ExperimentConfig config;
  int total_iterations = 0;
  // Final-iteration artifacts for inspection/reporting.
  FeatureMatrix final_visual_features;
  FeatureMatrix final_audio_features;
  RoutingResult final_routing;
};

// Called after each completed iteration with the encoders as trained then.
using IterationObserver =
    std::function<void(const DCIterationRecord&, const Encoder&, const Encoder&)>;

// The alternation: bootstrap from seeded random encoders, then per iteration
// extract features -> route pseudo-labels -> reset heads -> train both
// encoders; stops at max_dc_iterations or when both encoders' label agreement
// with the previous iteration reaches agreement_stop.
DCRunResult run_deep_clustering(const ExperimentConfig& cfg,
                                const std::vector<PairedSample>& data,
                                const IterationObserver& on_iteration = {});

}  // namespace xdc
