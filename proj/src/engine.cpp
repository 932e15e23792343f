#include "xdc/engine.hpp"

#include <algorithm>
#include <cmath>

#include "xdc/matching.hpp"
#include "xdc/threads.hpp"

namespace xdc {

namespace {

void validate_dataset(const std::vector<PairedSample>& data) {
  if (data.empty()) throw ConfigError("empty dataset");
  const std::size_t d_v = data[0].visual.size();
  const std::size_t d_a = data[0].audio.size();
  for (const auto& s : data) {
    if (s.visual.size() != d_v || s.audio.size() != d_a) {
      throw DataError("sample " + std::to_string(s.id) + ": inconsistent dimensions");
    }
  }
}

// Mean validation loss (sum of every head's CE per sample); rows in parallel.
double validation_loss(const Encoder& enc, const std::vector<PairedSample>& data,
                       Modality modality,
                       const std::vector<PseudoLabelSet::HeadLabels>& labels,
                       const std::vector<int>& val_rows) {
  std::vector<double> per_row(val_rows.size(), 0.0);
  parallel_for(val_rows.size(), [&](std::size_t vi) {
    const int row = val_rows[vi];
    const auto& x = sample_input(data[row], modality);
    double loss = 0.0;
    for (const auto& hl : labels) {
      const ForwardTrace t = forward(enc, x, hl.head);
      loss += softmax_ce_loss(t.logits, hl.labels[row]).loss;
    }
    per_row[vi] = loss;
  });
  double sum = 0.0;
  for (double l : per_row) sum += l;
  return sum / static_cast<double>(val_rows.size());
}

// Fraction of validation rows that the most-predicted class captures,
// maximized over heads (trivial-solution monitor).
double max_predicted_fraction(const Encoder& enc, const std::vector<PairedSample>& data,
                              Modality modality,
                              const std::vector<PseudoLabelSet::HeadLabels>& labels,
                              const std::vector<int>& val_rows) {
  double worst = 0.0;
  for (const auto& hl : labels) {
    std::vector<int> predicted(val_rows.size(), 0);
    parallel_for(val_rows.size(), [&](std::size_t vi) {
      const auto& x = sample_input(data[val_rows[vi]], modality);
      const ForwardTrace t = forward(enc, x, hl.head);
      int best = 0;
      for (int c = 1; c < static_cast<int>(t.logits.size()); ++c) {
        if (t.logits[c] > t.logits[best]) best = c;
      }
      predicted[vi] = best;
    });
    std::vector<int> counts(enc.head(hl.head).num_classes, 0);
    for (int p : predicted) ++counts[p];
    const int top = *std::max_element(counts.begin(), counts.end());
    worst = std::max(worst, static_cast<double>(top) / val_rows.size());
  }
  return worst;
}

std::vector<int> primary_labels(const std::vector<PseudoLabelSet::HeadLabels>& labels) {
  return labels.at(0).labels;
}

}  // namespace

Modality visual_slot_modality(Regime r) {
  return r == Regime::xdc_same_audio ? Modality::audio : Modality::visual;
}

Modality audio_slot_modality(Regime r) {
  return r == Regime::xdc_same_visual ? Modality::visual : Modality::audio;
}

const std::vector<double>& sample_input(const PairedSample& s, Modality m) {
  return m == Modality::visual ? s.visual : s.audio;
}

int raw_dim(const GeneratorSpec& g, Modality m) {
  return m == Modality::visual ? g.d_v_raw : g.d_a_raw;
}

std::vector<HeadId> regime_heads(Regime r) {
  switch (routing_regime(r)) {
    case Regime::sdc: return {HeadId::own};
    case Regime::mdc: return {HeadId::own, HeadId::cross};
    case Regime::cdc: return {HeadId::joint};
    default: return {HeadId::cross};
  }
}

FeatureMatrix extract_features(const Encoder& enc, const std::vector<PairedSample>& data,
                               Modality modality, FeatureTag tag) {
  if (data.empty()) throw ConfigError("extract_features: empty dataset");
  if (static_cast<int>(sample_input(data[0], modality).size()) != enc.body.input_dim()) {
    throw ConfigError("extract_features: " + to_string(modality) + " dim " +
                      std::to_string(sample_input(data[0], modality).size()) +
                      " does not match encoder input dim " +
                      std::to_string(enc.body.input_dim()));
  }
  FeatureMatrix f = make_feature_matrix(static_cast<int>(data.size()), enc.body.output_dim(), tag);
  parallel_for(data.size(), [&](std::size_t i) {
    const auto out = body_forward(enc.body, sample_input(data[i], modality));
    std::copy(out.begin(), out.end(), f.row(static_cast<int>(i)).begin());
  });
  return f;
}

EpochSampler::EpochSampler(const std::vector<int>& labels, const std::vector<int>& eligible_rows,
                           int epoch_size, int batch_size, std::uint64_t seed)
    : epoch_size_(epoch_size), batch_size_(batch_size), rng_(seed) {
  if (epoch_size < 1 || batch_size < 1) {
    throw ConfigError("sampler: epoch_size and batch_size must be >= 1");
  }
  if (eligible_rows.empty()) throw ConfigError("sampler: no eligible rows");
  for (int row : eligible_rows) {
    const int l = labels.at(row);
    if (l < 0) throw DataError("sampler: negative pseudo-label");
    if (l >= static_cast<int>(members_.size())) members_.resize(l + 1);
    members_[l].push_back(row);
  }
  for (int c = 0; c < static_cast<int>(members_.size()); ++c) {
    if (!members_[c].empty()) nonempty_.push_back(c);
  }
}

std::vector<int> EpochSampler::next_batch() {
  std::vector<int> batch;
  while (drawn_ < epoch_size_ && static_cast<int>(batch.size()) < batch_size_) {
    const auto& members = members_[nonempty_[rng_.below(nonempty_.size())]];
    batch.push_back(members[rng_.below(members.size())]);
    ++drawn_;
  }
  return batch;
}

void EpochSampler::reset_epoch() { drawn_ = 0; }

TrainResult train_on_pseudo_labels(Encoder& enc, const std::vector<PairedSample>& data,
                                   Modality modality,
                                   const std::vector<PseudoLabelSet::HeadLabels>& labels,
                                   const TrainingSchedule& schedule,
                                   const std::vector<int>& train_rows,
                                   const std::vector<int>& val_rows, std::uint64_t seed) {
  if (labels.empty()) throw ConfigError("train: no label arrays");
  for (const auto& hl : labels) {
    if (hl.labels.size() != data.size()) {
      throw DataError("train: label array for head '" + to_string(hl.head) +
                      "' does not cover the dataset");
    }
    (void)enc.head(hl.head);  // throws if the head is missing
  }
  if (train_rows.empty()) throw ConfigError("train: no training rows");
  if (val_rows.empty()) throw ConfigError("train: no validation rows");

  GradientTape tape = make_tape(enc);
  MomentumState momentum = make_momentum(enc);  // fresh per training phase
  TrainResult result;

  for (int epoch = 0; epoch < schedule.total_epochs; ++epoch) {
    const double lr = lr_at(schedule, epoch);
    EpochSampler sampler(labels[0].labels, train_rows, schedule.epoch_size,
                         schedule.batch_size, derive_seed(seed, 11, epoch));
    double epoch_loss = 0.0;
    int batches = 0;
    try {
      for (auto batch = sampler.next_batch(); !batch.empty(); batch = sampler.next_batch()) {
        tape.zero();
        const double inv = 1.0 / static_cast<double>(batch.size());
        double batch_loss = 0.0;
        for (int row : batch) {
          const auto& x = sample_input(data[row], modality);
          for (const auto& hl : labels) {
            ForwardTrace t = forward(enc, x, hl.head);
            LossGrad lg = softmax_ce_loss(t.logits, hl.labels[row]);
            batch_loss += lg.loss;
            for (double& g : lg.dlogits) g *= inv;
            backward(enc, t, lg.dlogits, tape);
          }
        }
        batch_loss *= inv;
        if (!std::isfinite(batch_loss)) throw TrainingDivergence("non-finite training loss");
        sgd_step(enc, tape, lr, schedule.weight_decay, schedule.momentum, momentum);
        epoch_loss += batch_loss;
        ++batches;
      }
      result.train_losses.push_back(epoch_loss / std::max(batches, 1));
      const double val = validation_loss(enc, data, modality, labels, val_rows);
      if (!std::isfinite(val)) throw TrainingDivergence("non-finite validation loss");
      result.val_losses.push_back(val);
    } catch (const DataError& e) {
      // Mid-training non-finite states are divergence, not bad input: inputs
      // and labels were validated before the first step.
      throw TrainingDivergence(std::string("training diverged: ") + e.what());
    }
    result.epochs_ran = epoch + 1;
    if (schedule.early_stop &&
        early_stop_check(result.val_losses, schedule.early_stop_patience)) {
      break;
    }
  }

  result.max_predicted_class_fraction =
      max_predicted_fraction(enc, data, modality, labels, val_rows);
  return result;
}

DCRunResult run_deep_clustering(const ExperimentConfig& cfg,
                                const std::vector<PairedSample>& data,
                                const IterationObserver& on_iteration) {
  validate_config(cfg);
  validate_dataset(data);
  const int n = static_cast<int>(data.size());
  if (cfg.k > n) throw ConfigError("k exceeds the dataset size");

  const Modality mv = visual_slot_modality(cfg.regime);
  const Modality ma = audio_slot_modality(cfg.regime);
  const std::vector<HeadId> heads = regime_heads(cfg.regime);

  auto body_dims = [&](Modality m, const std::vector<int>& hidden) {
    std::vector<int> dims{static_cast<int>(sample_input(data[0], m).size())};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    return dims;
  };

  DCRunResult result;
  result.config = cfg;
  {
    Rng rng_v(derive_seed(cfg.run_seed, kStreamEncoderInit, 0));
    Rng rng_a(derive_seed(cfg.run_seed, kStreamEncoderInit, 1));
    result.visual_encoder =
        make_encoder(mv, body_dims(mv, cfg.visual_hidden_dims), heads, cfg.k, rng_v);
    result.audio_encoder =
        make_encoder(ma, body_dims(ma, cfg.audio_hidden_dims), heads, cfg.k, rng_a);
  }
  Encoder& enc_v = result.visual_encoder;
  Encoder& enc_a = result.audio_encoder;

  const SplitIndices split =
      random_split(n, cfg.val_split, derive_seed(cfg.run_seed, kStreamValSplit));

  std::vector<int> prev_primary_v, prev_primary_a;
  for (int iter = 0; iter < cfg.max_dc_iterations; ++iter) {
    FeatureMatrix fv = extract_features(enc_v, data, mv, FeatureTag::visual);
    FeatureMatrix fa = extract_features(enc_a, data, ma, FeatureTag::audio);
    if (cfg.normalize_features) {
      fv = normalize_rows(fv);
      fa = normalize_rows(fa);
    }
    if (cfg.whiten_features) {
      fv = whiten(fv);
      fa = whiten(fa);
    }

    RoutingResult routing = route_pseudo_labels(
        cfg.regime, fv, fa, cfg.k, derive_seed(cfg.run_seed, kStreamCluster, iter), cfg.kmeans);

    DCIterationRecord rec;
    rec.iteration_index = iter;
    rec.pseudo_labels = routing.labels;
    for (const auto* fit : {&routing.visual_fit, &routing.audio_fit, &routing.joint_fit}) {
      if (fit->has_value()) {
        rec.kmeans_inertia.push_back((*fit)->inertia);
        rec.kmeans_reassignments.push_back((*fit)->reassignment_count);
      }
    }

    const std::vector<int> primary_v = primary_labels(routing.labels.for_visual_encoder);
    const std::vector<int> primary_a = primary_labels(routing.labels.for_audio_encoder);
    if (iter > 0) {
      rec.visual_agreement_with_previous = matched_agreement(prev_primary_v, primary_v, cfg.k);
      rec.audio_agreement_with_previous = matched_agreement(prev_primary_a, primary_a, cfg.k);
    }

    {
      Rng reset_v(derive_seed(cfg.run_seed, kStreamHeadReset, static_cast<std::uint64_t>(iter), 0));
      Rng reset_a(derive_seed(cfg.run_seed, kStreamHeadReset, static_cast<std::uint64_t>(iter), 1));
      reset_heads(enc_v, reset_v);
      reset_heads(enc_a, reset_a);
    }

    rec.visual_train = train_on_pseudo_labels(
        enc_v, data, mv, routing.labels.for_visual_encoder, cfg.pretrain, split.train,
        split.held_out, derive_seed(cfg.run_seed, kStreamTrain, static_cast<std::uint64_t>(iter), 0));
    rec.audio_train = train_on_pseudo_labels(
        enc_a, data, ma, routing.labels.for_audio_encoder, cfg.pretrain, split.train,
        split.held_out, derive_seed(cfg.run_seed, kStreamTrain, static_cast<std::uint64_t>(iter), 1));

    result.records.push_back(rec);
    if (on_iteration) on_iteration(result.records.back(), enc_v, enc_a);

    result.final_visual_features = std::move(fv);
    result.final_audio_features = std::move(fa);
    result.final_routing = std::move(routing);
    prev_primary_v = primary_v;
    prev_primary_a = primary_a;

    if (iter > 0 && std::min(rec.visual_agreement_with_previous,
                             rec.audio_agreement_with_previous) >= cfg.agreement_stop) {
      break;
    }
  }

  result.total_iterations = static_cast<int>(result.records.size());
  return result;
}

}  // namespace xdc
