#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "xdc/error.hpp"
#include "xdc/rng.hpp"

namespace xdc {

enum class Activation { relu, identity };
enum class HeadId { own, cross, joint };
enum class Modality { visual, audio };

std::string to_string(HeadId h);
std::string to_string(Modality m);

/// One fully-connected layer. Weights are row-major [out_dim][in_dim].
struct DenseLayer {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> weight;
  std::vector<double> bias;
  Activation act = Activation::relu;

  double& w(int r, int c) { return weight[static_cast<std::size_t>(r) * in_dim + c]; }
  double w(int r, int c) const { return weight[static_cast<std::size_t>(r) * in_dim + c]; }
};

struct DenseNet {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

/// Linear classification layer on top of body features.
struct ClassifierHead {
  HeadId id = HeadId::own;
  int feature_dim = 0;
  int num_classes = 0;
  std::vector<double> weight;  // [num_classes][feature_dim]
  std::vector<double> bias;    // [num_classes]
};

/// Feature body plus one classification head (two for the dual-head regime).
struct Encoder {
  DenseNet body;
  std::vector<ClassifierHead> heads;
  Modality modality = Modality::visual;

  bool has_head(HeadId id) const;
  const ClassifierHead& head(HeadId id) const;
  ClassifierHead& head(HeadId id);
};

struct TrainingSchedule {
  int epoch_size = 2000;       // es: samples per epoch
  int batch_size = 32;         // bs
  double base_lr = 0.01;       // lr
  int warmup_epochs = 10;      // we: linear ramp epochs
  int step_epochs = 10;        // se: decay interval
  double lr_decay = 0.01;      // gamma
  int total_epochs = 30;       // te
  double weight_decay = 1e-4;  // wd
  bool early_stop = true;      // stop after patience consecutive val-loss rises
  int early_stop_patience = 3;
  double momentum = 0.9;

  bool operator==(const TrainingSchedule&) const = default;
};

/// Intermediates cached by one forward pass; backward consumes them.
struct ForwardTrace {
  std::vector<std::vector<double>> inputs;   // input to each body layer
  std::vector<std::vector<double>> preacts;  // pre-activation per body layer
  std::vector<double> features;              // body output
  std::vector<double> logits;
  HeadId head = HeadId::own;
};

/// Per-parameter gradient buffers mirroring an encoder. Heads that a backward
/// call does not address keep zero gradients.
struct GradientTape {
  struct LayerGrad {
    std::vector<double> dweight;
    std::vector<double> dbias;
  };
  std::vector<LayerGrad> body;
  std::vector<LayerGrad> heads;

  void zero();
};

/// Heavy-ball velocity buffers, laid out exactly like the tape.
struct MomentumState {
  std::vector<GradientTape::LayerGrad> body;
  std::vector<GradientTape::LayerGrad> heads;
};

GradientTape make_tape(const Encoder& enc);
MomentumState make_momentum(const Encoder& enc);

/// Body output without trace bookkeeping; used for feature extraction.
std::vector<double> body_forward(const DenseNet& body, std::span<const double> x);

ForwardTrace forward(const Encoder& enc, std::span<const double> x, HeadId head);

struct LossGrad {
  double loss = 0.0;
  std::vector<double> dlogits;
};

/// Softmax cross-entropy with max-subtraction. dlogits = softmax - onehot.
LossGrad softmax_ce_loss(std::span<const double> logits, int label);

/// Accumulates gradients for the body and the addressed head into `tape`.
void backward(const Encoder& enc, const ForwardTrace& trace,
              std::span<const double> dlogits, GradientTape& tape);

/// v <- momentum * v + (g + wd * theta); theta <- theta - lr_now * v.
void sgd_step(Encoder& enc, const GradientTape& tape, double lr_now,
              double weight_decay, double momentum, MomentumState& state);

/// Warmup ramps linearly to base lr over `we` epochs; afterwards the lr is
/// multiplied by gamma every `se` epochs.
double lr_at(const TrainingSchedule& s, int epoch);

/// True iff the last `patience` successive deltas are all strictly positive.
bool early_stop_check(const std::vector<double>& val_losses, int patience);

/// He-uniform weights, zero biases. Hidden and output layers use `act`.
DenseNet make_dense_net(const std::vector<int>& dims, Rng& rng,
                        Activation act = Activation::relu);
ClassifierHead make_head(HeadId id, int feature_dim, int num_classes, Rng& rng);
Encoder make_encoder(Modality modality, const std::vector<int>& body_dims,
                     const std::vector<HeadId>& head_ids, int num_classes, Rng& rng);

/// Re-initializes every head from the seeded init distribution. The body is
/// untouched.
void reset_heads(Encoder& enc, Rng& rng);

std::uint64_t parameter_hash(const DenseNet& body);
std::uint64_t parameter_hash(const Encoder& enc);
std::size_t parameter_count(const Encoder& enc);

}  // namespace xdc
