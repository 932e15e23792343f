#include "xdc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>

#include "xdc/matching.hpp"
#include "xdc/threads.hpp"

namespace xdc {

namespace {

int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

std::vector<int> true_labels_of(const std::vector<PairedSample>& data) {
  std::vector<int> labels(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data[i].true_class;
  return labels;
}

// Single linear layer trained by SGD+momentum over precomputed features.
struct LinearTrainer {
  ClassifierHead head;
  std::vector<double> vw, vb;  // momentum buffers

  explicit LinearTrainer(ClassifierHead h)
      : head(std::move(h)),
        vw(head.weight.size(), 0.0),
        vb(head.bias.size(), 0.0) {}

  void step(const FeatureMatrix& feats, const std::vector<int>& labels,
            const std::vector<int>& batch, double lr, double wd, double momentum) {
    const int nc = head.num_classes;
    const int fd = head.feature_dim;
    std::vector<double> gw(head.weight.size(), 0.0), gb(head.bias.size(), 0.0);
    const double inv = 1.0 / static_cast<double>(batch.size());
    std::vector<double> logits(nc);
    for (int row : batch) {
      const auto x = feats.row(row);
      for (int c = 0; c < nc; ++c) {
        double acc = head.bias[c];
        const double* wr = head.weight.data() + static_cast<std::size_t>(c) * fd;
        for (int j = 0; j < fd; ++j) acc += wr[j] * x[j];
        logits[c] = acc;
      }
      LossGrad lg = softmax_ce_loss(logits, labels[row]);
      for (int c = 0; c < nc; ++c) {
        const double g = lg.dlogits[c] * inv;
        gb[c] += g;
        double* wr = gw.data() + static_cast<std::size_t>(c) * fd;
        for (int j = 0; j < fd; ++j) wr[j] += g * x[j];
      }
    }
    for (std::size_t i = 0; i < head.weight.size(); ++i) {
      const double g = gw[i];
      if (!std::isfinite(g)) throw TrainingDivergence("non-finite gradient");
      vw[i] = momentum * vw[i] + (g + wd * head.weight[i]);
      head.weight[i] -= lr * vw[i];
    }
    for (std::size_t i = 0; i < head.bias.size(); ++i) {
      const double g = gb[i];
      if (!std::isfinite(g)) throw TrainingDivergence("non-finite gradient");
      vb[i] = momentum * vb[i] + (g + wd * head.bias[i]);
      head.bias[i] -= lr * vb[i];
    }
  }

  int predict(std::span<const double> x) const {
    const int nc = head.num_classes;
    const int fd = head.feature_dim;
    double best = -std::numeric_limits<double>::infinity();
    int arg = 0;
    for (int c = 0; c < nc; ++c) {
      double acc = head.bias[c];
      const double* wr = head.weight.data() + static_cast<std::size_t>(c) * fd;
      for (int j = 0; j < fd; ++j) acc += wr[j] * x[j];
      if (!std::isfinite(acc)) throw TrainingDivergence("non-finite logits");
      if (acc > best) {
        best = acc;
        arg = c;
      }
    }
    return arg;
  }
};

std::vector<std::vector<int>> epoch_batches(const std::vector<int>& rows, int batch_size,
                                            Rng& rng) {
  std::vector<int> perm = rows;
  rng.shuffle(perm);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < perm.size(); i += batch_size) {
    batches.emplace_back(perm.begin() + i,
                         perm.begin() + std::min(perm.size(), i + batch_size));
  }
  return batches;
}

// fc-only training at one base LR; returns held-out top-1.
double probe_one_lr(const FeatureMatrix& feats, const std::vector<int>& labels,
                    const SplitIndices& split, int num_classes, TrainingSchedule schedule,
                    double lr, std::uint64_t head_seed, std::uint64_t train_seed) {
  schedule.base_lr = lr;
  Rng head_rng(head_seed);
  LinearTrainer trainer(make_head(HeadId::own, feats.dim, num_classes, head_rng));
  for (int epoch = 0; epoch < schedule.total_epochs; ++epoch) {
    const double lr_now = lr_at(schedule, epoch);
    Rng rng(derive_seed(train_seed, static_cast<std::uint64_t>(epoch)));
    for (const auto& batch : epoch_batches(split.train, schedule.batch_size, rng)) {
      trainer.step(feats, labels, batch, lr_now, schedule.weight_decay, schedule.momentum);
    }
  }
  int hits = 0;
  for (int row : split.held_out) {
    if (trainer.predict(feats.row(row)) == labels[row]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(split.held_out.size());
}

// Full-network training at one base LR on true labels; returns held-out top-1.
double finetune_one_lr(const Encoder& base, const std::vector<PairedSample>& data,
                       Modality modality, const std::vector<int>& labels,
                       const SplitIndices& split, int num_classes, TrainingSchedule schedule,
                       double lr, std::uint64_t head_seed, std::uint64_t train_seed) {
  schedule.base_lr = lr;
  Encoder enc = base;
  Rng head_rng(head_seed);
  enc.heads = {make_head(HeadId::own, enc.body.output_dim(), num_classes, head_rng)};

  GradientTape tape = make_tape(enc);
  MomentumState momentum = make_momentum(enc);
  for (int epoch = 0; epoch < schedule.total_epochs; ++epoch) {
    const double lr_now = lr_at(schedule, epoch);
    Rng rng(derive_seed(train_seed, static_cast<std::uint64_t>(epoch)));
    for (const auto& batch : epoch_batches(split.train, schedule.batch_size, rng)) {
      tape.zero();
      const double inv = 1.0 / static_cast<double>(batch.size());
      double loss = 0.0;
      for (int row : batch) {
        ForwardTrace t = forward(enc, sample_input(data[row], modality), HeadId::own);
        LossGrad lg = softmax_ce_loss(t.logits, labels[row]);
        loss += lg.loss;
        for (double& g : lg.dlogits) g *= inv;
        backward(enc, t, lg.dlogits, tape);
      }
      if (!std::isfinite(loss)) throw TrainingDivergence("non-finite training loss");
      sgd_step(enc, tape, lr_now, schedule.weight_decay, schedule.momentum, momentum);
    }
  }
  int hits = 0;
  for (int row : split.held_out) {
    const ForwardTrace t = forward(enc, sample_input(data[row], modality), HeadId::own);
    if (argmax_lowest(t.logits) == labels[row]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(split.held_out.size());
}

ProbeResult cross_validated(ProbeMode mode, const std::vector<double>& lr_set,
                            const std::function<double(double, std::uint64_t, std::uint64_t)>& run,
                            std::uint64_t seed) {
  if (lr_set.empty()) throw ConfigError("evaluation needs a non-empty lr set");
  ProbeResult out;
  out.mode = mode;
  out.lr_set = lr_set;
  for (std::size_t li = 0; li < lr_set.size(); ++li) {
    double acc = 0.0;
    try {
      acc = run(lr_set[li], derive_seed(seed, 1, li), derive_seed(seed, 2, li));
    } catch (const TrainingDivergence&) {
      out.diverged_lrs.push_back(lr_set[li]);
      acc = 0.0;
    } catch (const DataError&) {
      out.diverged_lrs.push_back(lr_set[li]);
      acc = 0.0;
    }
    out.per_lr_accuracy.push_back(acc);
    if (li == 0 || acc > out.top1_accuracy) {  // ties keep the earlier LR
      out.top1_accuracy = acc;
      out.best_lr = lr_set[li];
    }
  }
  return out;
}

}  // namespace

std::string to_string(ProbeMode m) {
  switch (m) {
    case ProbeMode::fc_only: return "fc_only";
    case ProbeMode::full_finetune: return "full_finetune";
    case ProbeMode::scratch: return "scratch";
  }
  return "?";
}

ProbeResult linear_probe(const Encoder& enc, const std::vector<PairedSample>& data,
                         Modality modality, const TrainingSchedule& schedule,
                         const std::vector<double>& lr_set, double test_fraction,
                         std::uint64_t split_seed, std::uint64_t seed) {
  const std::vector<int> labels = true_labels_of(data);
  const int nc = num_classes_of(data);
  if (nc < 2) throw DataError("linear_probe: need at least 2 classes");
  const SplitIndices split = stratified_split(labels, test_fraction, split_seed);
  const FeatureMatrix feats = extract_features(enc, data, modality, FeatureTag::visual);

  return cross_validated(
      ProbeMode::fc_only, lr_set,
      [&](double lr, std::uint64_t head_seed, std::uint64_t train_seed) {
        return probe_one_lr(feats, labels, split, nc, schedule, lr, head_seed, train_seed);
      },
      seed);
}

ProbeResult full_finetune(const Encoder& enc, const std::vector<PairedSample>& data,
                          Modality modality, const TrainingSchedule& schedule,
                          const std::vector<double>& lr_set, double test_fraction,
                          std::uint64_t split_seed, std::uint64_t seed) {
  const std::vector<int> labels = true_labels_of(data);
  const int nc = num_classes_of(data);
  if (nc < 2) throw DataError("full_finetune: need at least 2 classes");
  const SplitIndices split = stratified_split(labels, test_fraction, split_seed);

  return cross_validated(
      ProbeMode::full_finetune, lr_set,
      [&](double lr, std::uint64_t head_seed, std::uint64_t train_seed) {
        return finetune_one_lr(enc, data, modality, labels, split, nc, schedule, lr,
                               head_seed, train_seed);
      },
      seed);
}

ClusterReport cluster_purity(const std::vector<int>& assignments,
                             const std::vector<int>& true_labels, int k) {
  if (assignments.size() != true_labels.size()) {
    throw DataError("cluster_purity: misaligned arrays");
  }
  if (assignments.empty()) throw DataError("cluster_purity: empty arrays");
  if (k < 1) throw ConfigError("cluster_purity: k must be >= 1");
  int nc = 0;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    if (assignments[i] < 0 || assignments[i] >= k) {
      throw DataError("cluster_purity: assignment outside [0, k) at row " + std::to_string(i));
    }
    if (true_labels[i] < 0) throw DataError("cluster_purity: negative label");
    nc = std::max(nc, true_labels[i] + 1);
  }

  std::vector<std::vector<std::int64_t>> counts(k, std::vector<std::int64_t>(nc, 0));
  std::vector<int> sizes(k, 0);
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    ++counts[assignments[i]][true_labels[i]];
    ++sizes[assignments[i]];
  }

  ClusterReport report;
  for (int c = 0; c < k; ++c) {
    ClusterReport::Entry e;
    e.cluster_id = c;
    e.size = sizes[c];
    if (sizes[c] > 0) {
      std::vector<std::pair<int, double>> fracs;
      for (int l = 0; l < nc; ++l) {
        if (counts[c][l] > 0) {
          fracs.emplace_back(l, static_cast<double>(counts[c][l]) / sizes[c]);
        }
      }
      std::sort(fracs.begin(), fracs.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
      });
      if (fracs.size() > 5) fracs.resize(5);
      e.top_labels = std::move(fracs);
      e.purity = e.top_labels.front().second;
    }
    report.entries.push_back(std::move(e));
  }

  for (int c = 0; c < k; ++c) {
    if (sizes[c] > 0) report.ranking.push_back(c);
  }
  std::sort(report.ranking.begin(), report.ranking.end(), [&](int a, int b) {
    if (report.entries[a].purity != report.entries[b].purity) {
      return report.entries[a].purity > report.entries[b].purity;
    }
    return a < b;
  });

  report.nmi = nmi(assignments, true_labels);
  return report;
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw DataError("nmi: misaligned arrays");
  if (a.empty()) throw DataError("nmi: empty arrays");
  // Canonical argument order makes nmi(a,b) and nmi(b,a) run the exact same
  // float computation, so symmetry holds bit-for-bit.
  const bool swap = std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
  const std::vector<int>& x = swap ? b : a;
  const std::vector<int>& y = swap ? a : b;

  int kx = 0, ky = 0;
  for (int v : x) {
    if (v < 0) throw DataError("nmi: negative label");
    kx = std::max(kx, v + 1);
  }
  for (int v : y) {
    if (v < 0) throw DataError("nmi: negative label");
    ky = std::max(ky, v + 1);
  }
  const auto joint = contingency(x, y, kx, ky);
  std::vector<std::int64_t> nx(kx, 0), ny(ky, 0);
  for (int i = 0; i < kx; ++i) {
    for (int j = 0; j < ky; ++j) {
      nx[i] += joint[static_cast<std::size_t>(i) * ky + j];
      ny[j] += joint[static_cast<std::size_t>(i) * ky + j];
    }
  }
  const double n = static_cast<double>(x.size());

  double hx = 0.0, hy = 0.0, mi = 0.0;
  for (int i = 0; i < kx; ++i) {
    if (nx[i] > 0) {
      const double p = nx[i] / n;
      hx -= p * std::log(p);
    }
  }
  for (int j = 0; j < ky; ++j) {
    if (ny[j] > 0) {
      const double p = ny[j] / n;
      hy -= p * std::log(p);
    }
  }
  for (int i = 0; i < kx; ++i) {
    for (int j = 0; j < ky; ++j) {
      const std::int64_t c = joint[static_cast<std::size_t>(i) * ky + j];
      if (c > 0) {
        const double p = c / n;
        mi += p * std::log(c * n / (static_cast<double>(nx[i]) * ny[j]));
      }
    }
  }

  const double denom = 0.5 * (hx + hy);
  if (denom == 0.0) return 1.0;  // two single-block partitions are identical
  return std::clamp(mi / denom, 0.0, 1.0);
}

std::vector<std::vector<int>> exemplars(const ClusterModel& model, const FeatureMatrix& f,
                                        int per_cluster) {
  if (per_cluster < 1) throw ConfigError("exemplars: per_cluster must be >= 1");
  if (static_cast<int>(model.assignments.size()) != f.rows) {
    throw DataError("exemplars: model does not match the feature matrix");
  }
  std::vector<std::vector<int>> out(model.k);
  std::vector<std::vector<std::pair<double, int>>> by_cluster(model.k);
  for (int i = 0; i < f.rows; ++i) {
    const int c = model.assignments[i];
    by_cluster[c].emplace_back(squared_distance(f.row(i), model.centroid(c)), i);
  }
  for (int c = 0; c < model.k; ++c) {
    std::sort(by_cluster[c].begin(), by_cluster[c].end());  // distance, then row
    const int take = std::min<int>(per_cluster, static_cast<int>(by_cluster[c].size()));
    for (int i = 0; i < take; ++i) out[c].push_back(by_cluster[c][i].second);
  }
  return out;
}

std::string format_cluster_report(const ClusterReport& report, int top, int bottom) {
  std::ostringstream os;
  os << "rank  cluster  size  purity  top labels\n";
  const int total = static_cast<int>(report.ranking.size());
  auto emit = [&](int rank) {
    const auto& e = report.entries[report.ranking[rank]];
    char line[64];
    std::snprintf(line, sizeof line, "%-4d  %-7d  %-4d  %.2f    ", rank + 1, e.cluster_id,
                  e.size, e.purity);
    os << line;
    for (std::size_t i = 0; i < e.top_labels.size(); ++i) {
      char frac[32];
      std::snprintf(frac, sizeof frac, "%d(%.2f)", e.top_labels[i].first,
                    e.top_labels[i].second);
      os << (i ? " " : "") << frac;
    }
    os << "\n";
  };
  const int head = std::min(top, total);
  for (int r = 0; r < head; ++r) emit(r);
  const int tail_start = std::max(head, total - bottom);
  if (tail_start > head) os << "...\n";
  for (int r = tail_start; r < total; ++r) emit(r);
  return os.str();
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "regime") return SweepAxis::regime;
  if (s == "k") return SweepAxis::k;
  throw ConfigError("unknown sweep axis '" + s + "' (regime | k)");
}

EvalSuite evaluate_run(const DCRunResult& run, const std::vector<PairedSample>& data) {
  const ExperimentConfig& cfg = run.config;
  const Modality mv = visual_slot_modality(cfg.regime);
  EvalSuite suite;

  suite.probe = linear_probe(run.visual_encoder, data, mv, cfg.finetune, cfg.eval.lr_fc,
                             cfg.eval.test_fraction, cfg.eval.split_seed,
                             derive_seed(cfg.run_seed, kStreamEvaluation, 0));
  suite.finetune = full_finetune(run.visual_encoder, data, mv, cfg.finetune, cfg.eval.lr_full,
                                 cfg.eval.test_fraction, cfg.eval.split_seed,
                                 derive_seed(cfg.run_seed, kStreamEvaluation, 1));

  // Scratch baseline: features of a never-trained body with the same shape.
  std::vector<int> dims{run.visual_encoder.body.input_dim()};
  dims.insert(dims.end(), cfg.visual_hidden_dims.begin(), cfg.visual_hidden_dims.end());
  Rng scratch_rng(derive_seed(cfg.run_seed, kStreamEvaluation, 2));
  const Encoder scratch = make_encoder(mv, dims, {HeadId::own}, 2, scratch_rng);
  suite.scratch = linear_probe(scratch, data, mv, cfg.finetune, cfg.eval.lr_fc,
                               cfg.eval.test_fraction, cfg.eval.split_seed,
                               derive_seed(cfg.run_seed, kStreamEvaluation, 3));
  suite.scratch.mode = ProbeMode::scratch;

  // Cluster quality of the final visual-side fit (joint fit under cdc).
  const ClusterModel& fit = run.final_routing.joint_fit ? *run.final_routing.joint_fit
                                                        : *run.final_routing.visual_fit;
  suite.report = cluster_purity(fit.assignments, true_labels_of(data), cfg.k);
  const FeatureMatrix fit_matrix =
      run.final_routing.joint_fit
          ? joint_features(run.final_visual_features, run.final_audio_features)
          : run.final_visual_features;
  const auto ex = exemplars(fit, fit_matrix, 10);
  for (auto& entry : suite.report.entries) {
    for (int row : ex[entry.cluster_id]) {
      entry.exemplar_ids.push_back(static_cast<int>(data[row].id));
    }
  }
  return suite;
}

std::vector<SweepRow> ablation_sweep(const ExperimentConfig& base, SweepAxis axis,
                                     const std::vector<std::string>& values,
                                     const std::vector<PairedSample>& data) {
  if (values.empty()) throw ConfigError("sweep: values must not be empty");
  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    SweepRow row;
    row.axis_value = value;
    try {
      ExperimentConfig cfg = base;
      if (axis == SweepAxis::regime) {
        cfg.regime = parse_regime(value);
      } else {
        apply_override(cfg, "k", value);
      }
      validate_config(cfg);
      const DCRunResult run = run_deep_clustering(cfg, data);
      const EvalSuite suite = evaluate_run(run, data);
      row.probe_accuracy = suite.probe.top1_accuracy;
      row.finetune_accuracy = suite.finetune.top1_accuracy;
      row.scratch_accuracy = suite.scratch.top1_accuracy;
      row.nmi_vs_truth = suite.report.nmi;
      double weighted = 0.0;
      for (const auto& e : suite.report.entries) weighted += e.purity * e.size;
      row.mean_purity = weighted / static_cast<double>(data.size());
      row.iterations = run.total_iterations;
      row.ok = true;
    } catch (const Error& e) {
      row.ok = false;
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, SweepAxis axis) {
  std::ostringstream os;
  os << (axis == SweepAxis::regime ? "regime" : "k")
     << ",ok,probe_accuracy,finetune_accuracy,scratch_accuracy,nmi,mean_purity,iterations,error\n";
  auto real = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    os << r.axis_value << ',' << (r.ok ? "true" : "false") << ',' << real(r.probe_accuracy)
       << ',' << real(r.finetune_accuracy) << ',' << real(r.scratch_accuracy) << ','
       << real(r.nmi_vs_truth) << ',' << real(r.mean_purity) << ',' << r.iterations << ",\""
       << r.error << "\"\n";
  }
  return os.str();
}

}  // namespace xdc
