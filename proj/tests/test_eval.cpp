#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_util.hpp"
#include "xdc/eval.hpp"

using namespace xdc;
using namespace xdc::test;

namespace {

GeneratorSpec tiny_spec() {
  GeneratorSpec g;
  g.num_classes = 4;
  g.samples_per_class = 30;
  g.d_v_raw = 8;
  g.d_a_raw = 6;
  return g;
}

TrainingSchedule quick_schedule() {
  TrainingSchedule s;
  s.epoch_size = 400;
  s.batch_size = 16;
  s.total_epochs = 12;
  s.warmup_epochs = 3;  // proportional to the stock 10-of-30 ramp
  s.step_epochs = 4;
  s.weight_decay = 0.005;
  s.early_stop = false;
  return s;
}

// Hand-built labeled partition mirroring a published-style cluster table row:
// one 100-sample cluster at fractions .70/.04/.03/.02/.01 (+20 strays), plus
// singleton clusters so ranking and top-5 truncation have material to chew.
struct PurityFixture {
  std::vector<int> assignments;
  std::vector<int> labels;
};

PurityFixture make_purity_fixture() {
  PurityFixture f;
  auto add = [&](int cluster, int label, int n) {
    for (int i = 0; i < n; ++i) {
      f.assignments.push_back(cluster);
      f.labels.push_back(label);
    }
  };
  add(0, 0, 70);
  add(0, 1, 4);
  add(0, 2, 3);
  add(0, 3, 2);
  add(0, 4, 1);
  for (int j = 0; j < 20; ++j) add(0, 5 + j, 1);  // 20 distinct strays
  add(1, 2, 5);                                   // pure cluster
  add(2, 0, 2);
  add(2, 1, 2);  // tie on fractions
  return f;
}

}  // namespace

TEST_CASE("purity: identity assignment gives all-ones") {
  std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  const ClusterReport r = cluster_purity(labels, labels, 3);
  for (const auto& e : r.entries) {
    CHECK(e.purity == 1.0);
    CHECK(e.size == 2);
  }
  CHECK(r.nmi == doctest::Approx(1.0));
}

TEST_CASE("purity fixture reproduces exact fractions against hand counting") {
  const PurityFixture f = make_purity_fixture();
  const ClusterReport r = cluster_purity(f.assignments, f.labels, 4);

  const auto& big = r.entries[0];
  CHECK(big.size == 100);
  CHECK(big.purity == 0.70);  // exact: 70/100 in doubles
  REQUIRE(big.top_labels.size() == 5);
  CHECK(big.top_labels[0].first == 0);
  CHECK(big.top_labels[0].second == 0.70);
  CHECK(big.top_labels[1].first == 1);
  CHECK(big.top_labels[1].second == 0.04);
  CHECK(big.top_labels[2].first == 2);
  CHECK(big.top_labels[2].second == 0.03);
  CHECK(big.top_labels[3].first == 3);
  CHECK(big.top_labels[3].second == 0.02);
  // Fraction 0.01 is shared by label 4 and every stray; lowest label wins.
  CHECK(big.top_labels[4].first == 4);
  CHECK(big.top_labels[4].second == 0.01);

  CHECK(r.entries[1].purity == 1.0);
  CHECK(r.entries[2].purity == 0.5);
  CHECK(r.entries[2].top_labels[0].first == 0);  // tie at 0.5 -> lower label

  // Cluster 3 exists in [0,k) but is empty: size 0, excluded from ranking.
  CHECK(r.entries[3].size == 0);
  CHECK(r.entries[3].purity == 0.0);
  CHECK(r.ranking == std::vector<int>{1, 0, 2});
}

TEST_CASE("purity of random balanced assignments hugs one half") {
  Rng rng(17);
  const int n = 4000;
  std::vector<int> labels(n), assignments(n);
  for (int i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = i % 2;
    assignments[static_cast<std::size_t>(i)] = rng.index(2);
  }
  const ClusterReport r = cluster_purity(assignments, labels, 2);
  for (const auto& e : r.entries) {
    // 4-sigma binomial window around 0.5 for ~2000 draws.
    CHECK(e.purity > 0.5 - 0.045);
    CHECK(e.purity < 0.5 + 0.045);
  }
}

TEST_CASE("weighted mean purity dominates the class prior") {
  const auto data = generate(tiny_spec());
  std::vector<int> truth;
  for (const auto& s : data) truth.push_back(s.true_class);
  Rng rng(3);
  std::vector<int> assignments(truth.size());
  for (auto& a : assignments) a = rng.index(5);
  const ClusterReport r = cluster_purity(assignments, truth, 5);
  double weighted = 0.0;
  int total = 0;
  for (const auto& e : r.entries) {
    weighted += e.purity * e.size;
    total += e.size;
  }
  CHECK(weighted / total >= 0.25 - 1e-12);  // max class prior (balanced 4-way)
}

TEST_CASE("nmi: identity, permutation invariance, independence, constants") {
  std::vector<int> a = {0, 0, 1, 1, 2, 2, 0, 1, 2};
  CHECK(nmi(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<int> permuted = a;
  for (int& v : permuted) v = (v + 1) % 3;
  CHECK(nmi(a, permuted) == doctest::Approx(1.0).epsilon(1e-12));

  // Independent labelings: bias decays like O(k^2/N).
  Rng rng(23);
  const int n = 20000;
  std::vector<int> x(n), y(n);
  for (auto& v : x) v = rng.index(4);
  for (auto& v : y) v = rng.index(4);
  CHECK(nmi(x, y) < 16.0 / 20000.0 * 10.0);

  const std::vector<int> const_a(a.size(), 0), const_b(a.size(), 3);
  CHECK(nmi(const_a, const_b) == 1.0);  // identical single-block partitions
  CHECK(nmi(const_a, a) >= 0.0);
  CHECK(nmi(const_a, a) < 1e-12);  // zero information against a constant

  CHECK_THROWS_AS((void)nmi(a, std::vector<int>{0, 1}), DataError);  // misaligned
}

TEST_CASE("nmi symmetry is bit exact") {
  Rng rng(29);
  for (int t = 0; t < 20; ++t) {
    const int n = 50 + rng.index(100);
    std::vector<int> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
    for (auto& v : a) v = rng.index(3 + t % 4);
    for (auto& v : b) v = rng.index(2 + t % 5);
    CHECK(nmi(a, b) == nmi(b, a));
  }
}

TEST_CASE("exemplars: hand case, singleton, truncation") {
  // 1D members {0.0, 0.1, 0.9}: centroid 1/3, order (0.1, 0.0, 0.9).
  FeatureMatrix f = make_feature_matrix(4, 1, FeatureTag::visual);
  f.data = {0.0, 0.1, 0.9, 5.0};
  ClusterModel m;
  m.k = 2;
  m.dim = 1;
  m.centroids = {1.0 / 3.0, 5.0};
  m.assignments = {0, 0, 0, 1};

  const auto ex = exemplars(m, f, 10);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0] == std::vector<int>{1, 0, 2});
  CHECK(ex[1] == std::vector<int>{3});  // cluster of one

  const auto trimmed = exemplars(m, f, 2);
  CHECK(trimmed[0] == std::vector<int>{1, 0});
  CHECK_THROWS_AS((void)exemplars(m, f, 0), ConfigError);
}

TEST_CASE("report text lists rank, size, and two-decimal fractions") {
  const PurityFixture f = make_purity_fixture();
  ClusterReport r = cluster_purity(f.assignments, f.labels, 4);
  // Ranking holds 3 non-empty clusters; 1 + 1 leaves the middle elided.
  const std::string text = format_cluster_report(r, 1, 1);
  CHECK(text.find("rank") != std::string::npos);
  CHECK(text.find("1.00") != std::string::npos);
  CHECK(text.find("...") != std::string::npos);  // top/bottom separator
  int rows = 0;
  for (std::size_t pos = 0; (pos = text.find('\n', pos)) != std::string::npos; ++pos) ++rows;
  CHECK(rows == 4);  // header, top row, separator, bottom row

  const std::string all = format_cluster_report(r, 10, 10);
  CHECK(all.find("...") == std::string::npos);  // blocks overlap: no elision
  CHECK(all.find("0.70") != std::string::npos);  // rank-2 purity, two decimals
  CHECK(all.find("0.50") != std::string::npos);
}

TEST_CASE("report determinism: identical inputs give identical bytes") {
  const PurityFixture f = make_purity_fixture();
  const ClusterReport a = cluster_purity(f.assignments, f.labels, 4);
  const ClusterReport b = cluster_purity(f.assignments, f.labels, 4);
  CHECK(format_cluster_report(a, 3, 3) == format_cluster_report(b, 3, 3));
  CHECK(a.nmi == b.nmi);
}

TEST_CASE("linear probe: separable features, frozen body, sane lr bookkeeping") {
  const auto data = generate(tiny_spec());
  Rng rng(7);
  Encoder enc = make_encoder(Modality::visual, {8, 12, 6}, {HeadId::own}, 4, rng);
  const std::uint64_t body_before = parameter_hash(enc.body);

  const std::vector<double> lrs = {0.001, 0.01, 0.02};
  const ProbeResult r = linear_probe(enc, data, Modality::visual, quick_schedule(), lrs,
                                     0.2, 17, 5);
  CHECK(parameter_hash(enc.body) == body_before);
  CHECK(r.mode == ProbeMode::fc_only);
  CHECK(r.lr_set == lrs);
  REQUIRE(r.per_lr_accuracy.size() == 3);
  CHECK(std::find(lrs.begin(), lrs.end(), r.best_lr) != lrs.end());
  CHECK(r.top1_accuracy == *std::max_element(r.per_lr_accuracy.begin(),
                                             r.per_lr_accuracy.end()));
  // sigma=0.3 synthetic data stays linearly separable through a random body.
  CHECK(r.top1_accuracy > 0.95);
}

TEST_CASE("random frozen encoder beats the permutation null; shuffled labels do not") {
  GeneratorSpec spec;  // default 10x200
  spec.samples_per_class = 100;
  const auto data = generate(spec);
  Rng rng(11);
  Encoder enc = make_encoder(Modality::visual, {32, 64, 32}, {HeadId::own}, 10, rng);

  const std::vector<double> lrs = {0.01, 0.02};
  const ProbeResult r =
      linear_probe(enc, data, Modality::visual, quick_schedule(), lrs, 0.2, 17, 5);
  // Held-out size 200, null is Binomial(200, 0.1): 3 sigma ~ 0.064.
  CHECK(r.top1_accuracy > 0.1 + 3 * 0.0213);

  auto shuffled = data;
  std::vector<int> labels;
  for (const auto& s : shuffled) labels.push_back(s.true_class);
  Rng shuffle_rng(13);
  shuffle_rng.shuffle(labels);
  for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].true_class = labels[i];
  const ProbeResult null_r =
      linear_probe(enc, shuffled, Modality::visual, quick_schedule(), lrs, 0.2, 17, 5);
  CHECK(null_r.top1_accuracy < 0.1 + 3 * 0.0213);
  CHECK(null_r.top1_accuracy > 0.1 - 3 * 0.0213);
}

TEST_CASE("zero-epoch finetune equals the frozen random-head baseline") {
  const auto data = generate(tiny_spec());
  Rng rng(19);
  Encoder enc = make_encoder(Modality::visual, {8, 10, 5}, {HeadId::own}, 4, rng);
  TrainingSchedule zero = quick_schedule();
  zero.total_epochs = 0;
  const std::vector<double> lrs = {0.001, 0.01};
  const ProbeResult probe =
      linear_probe(enc, data, Modality::visual, zero, lrs, 0.2, 17, 5);
  const ProbeResult tune =
      full_finetune(enc, data, Modality::visual, zero, lrs, 0.2, 17, 5);
  CHECK(probe.per_lr_accuracy == tune.per_lr_accuracy);
  CHECK(probe.top1_accuracy == tune.top1_accuracy);
}

TEST_CASE("full finetune keeps pace with the linear probe") {
  const auto data = generate(tiny_spec());
  Rng rng(23);
  Encoder enc = make_encoder(Modality::visual, {8, 12, 6}, {HeadId::own}, 4, rng);
  const std::vector<double> lrs = {0.002, 0.01};
  const ProbeResult probe =
      linear_probe(enc, data, Modality::visual, quick_schedule(), lrs, 0.2, 17, 5);
  const ProbeResult tune =
      full_finetune(enc, data, Modality::visual, quick_schedule(), lrs, 0.2, 17, 5);
  CHECK(tune.top1_accuracy >= probe.top1_accuracy - 0.05);
}

TEST_CASE("diverging lr is scored zero and flagged") {
  const auto data = generate(tiny_spec());
  Rng rng(27);
  Encoder enc = make_encoder(Modality::visual, {8, 6}, {HeadId::own}, 4, rng);
  const std::vector<double> lrs = {0.01, 1e14};
  const ProbeResult r = full_finetune(enc, data, Modality::visual, quick_schedule(), lrs,
                                      0.2, 17, 5);
  REQUIRE(r.diverged_lrs.size() == 1);
  CHECK(r.diverged_lrs[0] == 1e14);
  CHECK(r.per_lr_accuracy[1] == 0.0);
  CHECK(r.best_lr == 0.01);
}

TEST_CASE("evaluate_run covers probe, finetune, scratch, and the report") {
  ExperimentConfig cfg;
  cfg.generator = tiny_spec();
  cfg.k = 4;
  cfg.visual_hidden_dims = {12, 6};
  cfg.audio_hidden_dims = {12, 6};
  cfg.max_dc_iterations = 1;
  cfg.pretrain = quick_schedule();
  cfg.finetune = quick_schedule();
  const auto data = generate(cfg.generator);
  const DCRunResult run = run_deep_clustering(cfg, data);
  const EvalSuite suite = evaluate_run(run, data);

  CHECK(suite.probe.mode == ProbeMode::fc_only);
  CHECK(suite.finetune.mode == ProbeMode::full_finetune);
  CHECK(suite.scratch.mode == ProbeMode::scratch);
  CHECK(suite.probe.lr_set == cfg.eval.lr_fc);
  CHECK(suite.finetune.lr_set == cfg.eval.lr_full);
  CHECK(static_cast<int>(suite.report.entries.size()) == cfg.k);
  CHECK(suite.report.nmi >= 0.0);
  CHECK(suite.report.nmi <= 1.0);
  for (const auto& e : suite.report.entries) {
    if (e.size > 0) CHECK_FALSE(e.exemplar_ids.empty());
  }
}

TEST_CASE("single-value sweep equals a direct run") {
  ExperimentConfig cfg;
  cfg.generator = tiny_spec();
  cfg.k = 4;
  cfg.visual_hidden_dims = {10, 5};
  cfg.audio_hidden_dims = {10, 5};
  cfg.max_dc_iterations = 1;
  cfg.pretrain = quick_schedule();
  cfg.finetune = quick_schedule();
  const auto data = generate(cfg.generator);

  const auto rows = ablation_sweep(cfg, SweepAxis::regime, {"xdc"}, data);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].ok);

  ExperimentConfig direct = cfg;
  direct.regime = Regime::xdc;
  const DCRunResult run = run_deep_clustering(direct, data);
  const EvalSuite suite = evaluate_run(run, data);
  CHECK(rows[0].probe_accuracy == suite.probe.top1_accuracy);
  CHECK(rows[0].finetune_accuracy == suite.finetune.top1_accuracy);
  CHECK(rows[0].nmi_vs_truth == suite.report.nmi);
  CHECK(rows[0].iterations == run.total_iterations);
}

TEST_CASE("sweep records per-row errors without aborting") {
  ExperimentConfig cfg;
  cfg.generator = tiny_spec();
  cfg.k = 4;
  cfg.max_dc_iterations = 1;
  cfg.pretrain = quick_schedule();
  cfg.finetune = quick_schedule();
  const auto data = generate(cfg.generator);

  const auto rows = ablation_sweep(cfg, SweepAxis::k, {"4", "1"}, data);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].ok);
  CHECK_FALSE(rows[1].ok);  // k=1 violates the config contract
  CHECK_FALSE(rows[1].error.empty());

  const std::string csv = sweep_csv(rows, SweepAxis::k);
  CHECK(csv.find("k,") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows
}

TEST_CASE("finer clusterings do not lose purity (k sweep trend)") {
  double purity_low = 0.0, purity_high = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig cfg;
    cfg.generator = tiny_spec();
    cfg.generator.seed = seed;
    cfg.run_seed = seed;
    cfg.visual_hidden_dims = {10, 5};
    cfg.audio_hidden_dims = {10, 5};
    cfg.max_dc_iterations = 1;
    cfg.pretrain = quick_schedule();
    cfg.finetune = quick_schedule();
    const auto data = generate(cfg.generator);
    const auto rows = ablation_sweep(cfg, SweepAxis::k, {"2", "16"}, data);
    REQUIRE(rows[0].ok);
    REQUIRE(rows[1].ok);
    purity_low += rows[0].mean_purity;
    purity_high += rows[1].mean_purity;
  }
  CHECK(purity_high >= purity_low);
}

TEST_CASE("parse_sweep_axis accepts exactly regime and k") {
  CHECK(parse_sweep_axis("regime") == SweepAxis::regime);
  CHECK(parse_sweep_axis("k") == SweepAxis::k);
  CHECK_THROWS_AS((void)parse_sweep_axis("lr"), ConfigError);
}
