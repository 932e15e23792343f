#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "xdc/engine.hpp"
#include "xdc/matching.hpp"

using namespace xdc;
using namespace xdc::test;

namespace {

GeneratorSpec small_spec() {
  GeneratorSpec g;
  g.num_classes = 4;
  g.samples_per_class = 25;
  g.d_v_raw = 8;
  g.d_a_raw = 6;
  return g;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.generator = small_spec();
  cfg.k = 4;
  cfg.visual_hidden_dims = {16, 8};
  cfg.audio_hidden_dims = {16, 8};
  cfg.max_dc_iterations = 2;
  cfg.pretrain.epoch_size = 200;
  cfg.pretrain.total_epochs = 4;
  cfg.pretrain.warmup_epochs = 1;
  cfg.pretrain.step_epochs = 2;
  return cfg;
}

std::vector<int> true_labels(const std::vector<PairedSample>& data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(s.true_class);
  return out;
}

}  // namespace

TEST_CASE("slot modalities and head sets per regime") {
  CHECK(visual_slot_modality(Regime::xdc) == Modality::visual);
  CHECK(audio_slot_modality(Regime::xdc) == Modality::audio);
  CHECK(visual_slot_modality(Regime::xdc_same_audio) == Modality::audio);
  CHECK(audio_slot_modality(Regime::xdc_same_audio) == Modality::audio);
  CHECK(visual_slot_modality(Regime::xdc_same_visual) == Modality::visual);
  CHECK(audio_slot_modality(Regime::xdc_same_visual) == Modality::visual);

  CHECK(regime_heads(Regime::sdc) == std::vector<HeadId>{HeadId::own});
  CHECK(regime_heads(Regime::mdc) == std::vector<HeadId>{HeadId::own, HeadId::cross});
  CHECK(regime_heads(Regime::cdc) == std::vector<HeadId>{HeadId::joint});
  CHECK(regime_heads(Regime::xdc) == std::vector<HeadId>{HeadId::cross});
  CHECK(regime_heads(Regime::xdc_same_visual) == std::vector<HeadId>{HeadId::cross});
}

TEST_CASE("extract_features: zero body, identity slice, per-sample oracle") {
  const auto data = generate(small_spec());

  Rng rng(3);
  Encoder enc = make_encoder(Modality::visual, {8, 5, 4}, {HeadId::own}, 4, rng);
  for (auto& l : enc.body.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  const FeatureMatrix zero = extract_features(enc, data, Modality::visual, FeatureTag::visual);
  CHECK(zero.rows == static_cast<int>(data.size()));
  CHECK(zero.dim == 4);
  for (double v : zero.data) CHECK(v == 0.0);

  Rng rng2(4);
  Encoder real = make_encoder(Modality::audio, {6, 5, 3}, {HeadId::own}, 4, rng2);
  const FeatureMatrix f = extract_features(real, data, Modality::audio, FeatureTag::audio);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto row = body_forward(real.body, data[i].audio);
    for (int j = 0; j < 3; ++j) {
      CHECK(f.row(static_cast<int>(i))[static_cast<std::size_t>(j)] ==
            row[static_cast<std::size_t>(j)]);
    }
  }

  CHECK_THROWS_AS(
      (void)extract_features(real, data, Modality::visual, FeatureTag::visual),
      ConfigError);  // 8-dim input into 6-dim body
}

TEST_CASE("epoch sampler: counts, uniform-over-cluster balance, determinism") {
  // One cluster only: plain uniform draws.
  std::vector<int> one_cluster(50, 0);
  std::vector<int> rows(50);
  std::iota(rows.begin(), rows.end(), 0);
  EpochSampler s1(one_cluster, rows, 10, 4, 5);
  std::vector<int> seen;
  for (auto b = s1.next_batch(); !b.empty(); b = s1.next_batch()) {
    CHECK(b.size() <= 4);
    seen.insert(seen.end(), b.begin(), b.end());
  }
  CHECK(seen.size() == 10);

  // es = bs = 1: exactly one index.
  EpochSampler s2(one_cluster, rows, 1, 1, 6);
  CHECK(s2.next_batch().size() == 1);
  CHECK(s2.next_batch().empty());

  // Unbalanced clusters (90/10) still supply ~half the draws each.
  std::vector<int> skewed(100, 0);
  std::fill(skewed.begin() + 90, skewed.end(), 1);
  std::vector<int> all_rows(100);
  std::iota(all_rows.begin(), all_rows.end(), 0);
  EpochSampler s3(skewed, all_rows, 10000, 50, 7);
  int from_minority = 0;
  for (auto b = s3.next_batch(); !b.empty(); b = s3.next_batch()) {
    for (int r : b) from_minority += r >= 90;
  }
  CHECK(from_minority > 5000 - 200);  // 4 sigma of binomial(10000, 0.5)
  CHECK(from_minority < 5000 + 200);

  // Same seed -> same stream.
  EpochSampler a(skewed, all_rows, 64, 8, 9);
  EpochSampler b(skewed, all_rows, 64, 8, 9);
  for (auto batch = a.next_batch(); !batch.empty(); batch = a.next_batch()) {
    CHECK(batch == b.next_batch());
  }

  // Only eligible rows are ever drawn.
  std::vector<int> eligible = {3, 4, 5, 6};
  EpochSampler s4(skewed, eligible, 100, 10, 11);
  for (auto batch = s4.next_batch(); !batch.empty(); batch = s4.next_batch()) {
    for (int r : batch) {
      CHECK(r >= 3);
      CHECK(r <= 6);
    }
  }
}

TEST_CASE("training on separable pseudo-labels drives the loss down") {
  const auto data = generate(small_spec());
  Rng rng(10);
  Encoder enc = make_encoder(Modality::visual, {8, 16, 8}, {HeadId::own}, 4, rng);

  std::vector<PseudoLabelSet::HeadLabels> labels(1);
  labels[0].head = HeadId::own;
  labels[0].labels = true_labels(data);

  const SplitIndices split = random_split(static_cast<int>(data.size()), 0.1, 2);
  TrainingSchedule sched;
  sched.epoch_size = 400;
  sched.batch_size = 16;
  sched.total_epochs = 6;
  sched.warmup_epochs = 2;
  sched.step_epochs = 2;
  sched.early_stop = false;
  const TrainResult r =
      train_on_pseudo_labels(enc, data, Modality::visual, labels, sched, split.train,
                             split.held_out, 77);
  REQUIRE(r.epochs_ran == 6);
  REQUIRE(r.train_losses.size() == 6);
  CHECK(r.train_losses.back() < r.train_losses.front());
  CHECK(r.val_losses.back() < r.val_losses.front());
  CHECK(r.max_predicted_class_fraction <= 1.0);
  CHECK(r.max_predicted_class_fraction >= 1.0 / 4.0 - 1e-12);
}

TEST_CASE("dual-head training with identical labels doubles the body gradient") {
  // One shared body step with two identical heads equals 2x the single-head
  // body gradient; verified indirectly: losses sum and both heads move.
  const auto data = generate(small_spec());
  Rng rng(20);
  Encoder dual =
      make_encoder(Modality::visual, {8, 6}, {HeadId::own, HeadId::cross}, 4, rng);
  // Make both heads identical so their gradients coincide.
  dual.head(HeadId::cross).weight = dual.head(HeadId::own).weight;
  dual.head(HeadId::cross).bias = dual.head(HeadId::own).bias;

  GradientTape tape = make_tape(dual);
  const auto& x = data[0].visual;
  for (HeadId h : {HeadId::own, HeadId::cross}) {
    const ForwardTrace t = forward(dual, x, h);
    const LossGrad lg = softmax_ce_loss(t.logits, 1);
    backward(dual, t, lg.dlogits, tape);
  }

  GradientTape single_tape = make_tape(dual);
  const ForwardTrace t = forward(dual, x, HeadId::own);
  const LossGrad lg = softmax_ce_loss(t.logits, 1);
  backward(dual, t, lg.dlogits, single_tape);

  for (std::size_t i = 0; i < tape.body[0].dweight.size(); ++i) {
    CHECK(tape.body[0].dweight[i] ==
          doctest::Approx(2.0 * single_tape.body[0].dweight[i]).epsilon(1e-12));
  }
}

TEST_CASE("training propagates divergence and validates labels") {
  const auto data = generate(small_spec());
  Rng rng(30);
  Encoder enc = make_encoder(Modality::visual, {8, 4}, {HeadId::own}, 4, rng);
  std::vector<PseudoLabelSet::HeadLabels> labels(1);
  labels[0].head = HeadId::cross;  // no such head on this encoder
  labels[0].labels = true_labels(data);
  const SplitIndices split = random_split(static_cast<int>(data.size()), 0.1, 2);
  TrainingSchedule sched;
  sched.total_epochs = 1;
  CHECK_THROWS_AS((void)train_on_pseudo_labels(enc, data, Modality::visual, labels, sched,
                                               split.train, split.held_out, 1),
                  ConfigError);

  labels[0].head = HeadId::own;
  labels[0].labels.pop_back();  // misaligned
  CHECK_THROWS_AS((void)train_on_pseudo_labels(enc, data, Modality::visual, labels, sched,
                                               split.train, split.held_out, 1),
                  DataError);

  labels[0].labels = true_labels(data);
  TrainingSchedule hot = sched;
  hot.epoch_size = 200;
  hot.base_lr = 1e200;  // one step lands near 1e199; the next forward overflows
  hot.warmup_epochs = 0;
  CHECK_THROWS_AS((void)train_on_pseudo_labels(enc, data, Modality::visual, labels, hot,
                                               split.train, split.held_out, 1),
                  TrainingDivergence);
}

TEST_CASE("encoder training order does not couple the two encoders") {
  const auto data = generate(small_spec());
  std::vector<PseudoLabelSet::HeadLabels> labels(1);
  labels[0].head = HeadId::own;
  labels[0].labels = true_labels(data);
  const SplitIndices split = random_split(static_cast<int>(data.size()), 0.1, 2);
  TrainingSchedule sched;
  sched.epoch_size = 100;
  sched.total_epochs = 2;
  sched.warmup_epochs = 1;
  sched.step_epochs = 1;

  Rng rng_v(40), rng_a(41);
  Encoder v1 = make_encoder(Modality::visual, {8, 6}, {HeadId::own}, 4, rng_v);
  Encoder a1 = make_encoder(Modality::audio, {6, 6}, {HeadId::own}, 4, rng_a);
  Encoder v2 = v1, a2 = a1;

  (void)train_on_pseudo_labels(v1, data, Modality::visual, labels, sched, split.train,
                               split.held_out, 50);
  (void)train_on_pseudo_labels(a1, data, Modality::audio, labels, sched, split.train,
                               split.held_out, 51);

  (void)train_on_pseudo_labels(a2, data, Modality::audio, labels, sched, split.train,
                               split.held_out, 51);
  (void)train_on_pseudo_labels(v2, data, Modality::visual, labels, sched, split.train,
                               split.held_out, 50);

  CHECK(parameter_hash(v1) == parameter_hash(v2));
  CHECK(parameter_hash(a1) == parameter_hash(a2));
}

TEST_CASE("run_deep_clustering: shapes, agreement accounting, determinism") {
  ExperimentConfig cfg = small_config();
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);

  CHECK(run.total_iterations >= 1);
  CHECK(run.total_iterations <= cfg.max_dc_iterations);
  CHECK(static_cast<int>(run.records.size()) == run.total_iterations);
  for (const auto& rec : run.records) {
    CHECK(rec.visual_train.epochs_ran <= cfg.pretrain.total_epochs);
    CHECK(rec.pseudo_labels.k == cfg.k);
    for (double inertia : rec.kmeans_inertia) CHECK(inertia >= 0.0);
  }
  CHECK(run.records[0].visual_agreement_with_previous == 0.0);

  const DCRunResult again = run_deep_clustering(cfg, data);
  CHECK(parameter_hash(run.visual_encoder) == parameter_hash(again.visual_encoder));
  CHECK(parameter_hash(run.audio_encoder) == parameter_hash(again.audio_encoder));
  CHECK(run.final_visual_features.data == again.final_visual_features.data);
}

TEST_CASE("max_dc_iterations=1 runs exactly one iteration") {
  ExperimentConfig cfg = small_config();
  cfg.max_dc_iterations = 1;
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);
  CHECK(run.total_iterations == 1);
  CHECK(run.records.size() == 1);
}

TEST_CASE("xdc exclusivity: visual labels are the audio fit's assignments") {
  ExperimentConfig cfg = small_config();
  cfg.regime = Regime::xdc;
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);
  const RoutingResult& final = run.final_routing;
  REQUIRE(final.audio_fit.has_value());
  CHECK(final.labels.for_visual_encoder[0].labels == final.audio_fit->assignments);
  REQUIRE(final.visual_fit.has_value());
  CHECK(final.labels.for_audio_encoder[0].labels == final.visual_fit->assignments);
}

TEST_CASE("sdc and xdc route different labels to the visual encoder") {
  ExperimentConfig cfg = small_config();
  cfg.max_dc_iterations = 1;
  const auto data = generate(cfg.generator);

  cfg.regime = Regime::sdc;
  const DCRunResult sdc = run_deep_clustering(cfg, data);
  cfg.regime = Regime::xdc;
  const DCRunResult xdc = run_deep_clustering(cfg, data);

  CHECK(sdc.records[0].pseudo_labels.for_visual_encoder[0].labels !=
        xdc.records[0].pseudo_labels.for_visual_encoder[0].labels);
  // Same underlying fits: SDC's visual labels are XDC's audio-encoder labels.
  CHECK(sdc.records[0].pseudo_labels.for_visual_encoder[0].labels ==
        xdc.records[0].pseudo_labels.for_audio_encoder[0].labels);
}

TEST_CASE("agreement with ground truth improves over iteration zero") {
  // Noise high enough that clustering random-encoder features is imperfect,
  // low enough that the alternation can recover structure; warmup epochs stay
  // proportional to the stock schedule so early training cannot burn the body.
  ExperimentConfig cfg = small_config();
  cfg.regime = Regime::xdc;
  cfg.max_dc_iterations = 4;
  cfg.agreement_stop = 1.0;  // only perfect agreement stops early
  cfg.generator.samples_per_class = 60;
  cfg.generator.noise_sigma = 2.0;
  cfg.pretrain.total_epochs = 9;
  cfg.pretrain.warmup_epochs = 3;
  cfg.pretrain.step_epochs = 3;
  cfg.pretrain.epoch_size = 400;
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);

  const auto truth = true_labels(data);
  const auto& first = run.records.front().pseudo_labels.for_visual_encoder[0].labels;
  const auto& last = run.records.back().pseudo_labels.for_visual_encoder[0].labels;
  const double before = matched_agreement(first, truth, cfg.k);
  const double after = matched_agreement(last, truth, cfg.k);
  CHECK(after > before);
}

TEST_CASE("agreement_stop halts the alternation early") {
  ExperimentConfig cfg = small_config();
  cfg.max_dc_iterations = 6;
  // Matched agreement is always >= 1/k, so any epsilon threshold stops at the
  // first iteration that has a predecessor to compare against.
  cfg.agreement_stop = 1e-9;
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);
  CHECK(run.total_iterations == 2);
}

TEST_CASE("iteration observer sees every record") {
  ExperimentConfig cfg = small_config();
  const auto data = generate(cfg.generator);
  int calls = 0;
  const DCRunResult run = run_deep_clustering(
      cfg, data, [&](const DCIterationRecord& rec, const Encoder&, const Encoder&) {
        CHECK(rec.iteration_index == calls);
        ++calls;
      });
  CHECK(calls == run.total_iterations);
}

TEST_CASE("engine rejects k larger than the dataset") {
  ExperimentConfig cfg = small_config();
  cfg.k = 1000;
  const auto data = generate(cfg.generator);
  CHECK_THROWS_AS((void)run_deep_clustering(cfg, data), ConfigError);
  CHECK_THROWS_AS((void)run_deep_clustering(cfg, {}), ConfigError);
}

TEST_CASE("same-modality regime feeds one modality to both encoders") {
  ExperimentConfig cfg = small_config();
  cfg.regime = Regime::xdc_same_visual;
  cfg.max_dc_iterations = 1;
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);
  CHECK(run.visual_encoder.body.input_dim() == cfg.generator.d_v_raw);
  CHECK(run.audio_encoder.body.input_dim() == cfg.generator.d_v_raw);
}
