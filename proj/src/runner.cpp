#include "xdc/runner.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "xdc/checkpoint.hpp"
#include "xdc/matching.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xdc {

namespace {

std::uint64_t labels_digest(const std::vector<int>& labels) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  for (int v : labels) {
    h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
    h *= 1099511628211ull;
  }
  return h;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw ParseError("write failed for '" + path.string() + "'");
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("missing file '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json head_labels_json(const PseudoLabelSet::HeadLabels& hl) {
  return json{{"head", to_string(hl.head)},
              {"labels_digest", labels_digest(hl.labels)},
              {"count", hl.labels.size()}};
}

json iteration_json(const DCIterationRecord& rec) {
  json j;
  j["iteration"] = rec.iteration_index;
  j["kmeans_inertia"] = rec.kmeans_inertia;
  j["kmeans_reassignments"] = rec.kmeans_reassignments;
  j["visual_agreement_with_previous"] = rec.visual_agreement_with_previous;
  j["audio_agreement_with_previous"] = rec.audio_agreement_with_previous;
  j["visual_epochs_ran"] = rec.visual_train.epochs_ran;
  j["audio_epochs_ran"] = rec.audio_train.epochs_ran;
  j["visual_final_val_loss"] =
      rec.visual_train.val_losses.empty() ? 0.0 : rec.visual_train.val_losses.back();
  j["audio_final_val_loss"] =
      rec.audio_train.val_losses.empty() ? 0.0 : rec.audio_train.val_losses.back();
  j["visual_max_predicted_class_fraction"] = rec.visual_train.max_predicted_class_fraction;
  j["audio_max_predicted_class_fraction"] = rec.audio_train.max_predicted_class_fraction;
  json vl = json::array(), al = json::array();
  for (const auto& hl : rec.pseudo_labels.for_visual_encoder) vl.push_back(head_labels_json(hl));
  for (const auto& hl : rec.pseudo_labels.for_audio_encoder) al.push_back(head_labels_json(hl));
  j["routing"] = json{{"regime", to_string(rec.pseudo_labels.source_regime)},
                      {"k", rec.pseudo_labels.k},
                      {"visual_labels", vl},
                      {"audio_labels", al}};
  return j;
}

json probe_json(const ProbeResult& p) {
  return json{{"mode", to_string(p.mode)},
              {"top1_accuracy", p.top1_accuracy},
              {"best_lr", p.best_lr},
              {"lr_set", p.lr_set},
              {"per_lr_accuracy", p.per_lr_accuracy},
              {"diverged_lrs", p.diverged_lrs}};
}

json report_json(const ClusterReport& r) {
  json entries = json::array();
  for (const auto& e : r.entries) {
    json tl = json::array();
    for (const auto& [label, frac] : e.top_labels) tl.push_back(json{{"label", label}, {"fraction", frac}});
    entries.push_back(json{{"cluster_id", e.cluster_id},
                           {"size", e.size},
                           {"purity", e.purity},
                           {"top_labels", tl},
                           {"exemplar_ids", e.exemplar_ids}});
  }
  return json{{"entries", entries}, {"ranking", r.ranking}, {"nmi", r.nmi}};
}

ClusterReport report_from_json(const json& j) {
  ClusterReport r;
  r.nmi = j.at("nmi").get<double>();
  r.ranking = j.at("ranking").get<std::vector<int>>();
  for (const auto& e : j.at("entries")) {
    ClusterReport::Entry entry;
    entry.cluster_id = e.at("cluster_id").get<int>();
    entry.size = e.at("size").get<int>();
    entry.purity = e.at("purity").get<double>();
    for (const auto& tl : e.at("top_labels")) {
      entry.top_labels.emplace_back(tl.at("label").get<int>(), tl.at("fraction").get<double>());
    }
    entry.exemplar_ids = e.at("exemplar_ids").get<std::vector<int>>();
    r.entries.push_back(std::move(entry));
  }
  return r;
}

// Deterministic section: everything derived from config + seed, no clocks.
std::string metrics_json_text(const DCRunResult& run, const EvalSuite& eval) {
  json j;
  j["format_version"] = 1;
  j["regime"] = to_string(run.config.regime);
  j["k"] = run.config.k;
  j["run_seed"] = run.config.run_seed;
  j["total_iterations"] = run.total_iterations;
  json iters = json::array();
  for (const auto& rec : run.records) iters.push_back(iteration_json(rec));
  j["iterations"] = iters;
  j["eval"] = json{{"probe", probe_json(eval.probe)},
                   {"finetune", probe_json(eval.finetune)},
                   {"scratch", probe_json(eval.scratch)}};
  j["cluster_report"] = report_json(eval.report);
  return j.dump(2) + "\n";
}

std::string assignments_csv(const std::vector<PairedSample>& data,
                            const PseudoLabelSet& labels) {
  std::ostringstream out;
  out << "row,sample_id";
  for (const auto& hl : labels.for_visual_encoder) out << ",visual_" << to_string(hl.head);
  for (const auto& hl : labels.for_audio_encoder) out << ",audio_" << to_string(hl.head);
  out << "\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    out << i << ',' << data[i].id;
    for (const auto& hl : labels.for_visual_encoder) out << ',' << hl.labels[i];
    for (const auto& hl : labels.for_audio_encoder) out << ',' << hl.labels[i];
    out << "\n";
  }
  return out.str();
}

void append_fit(std::vector<NamedTensor>& tensors, const std::optional<ClusterModel>& fit,
                const std::string& prefix) {
  if (!fit) return;
  auto more = cluster_model_tensors(*fit, prefix);
  tensors.insert(tensors.end(), std::make_move_iterator(more.begin()),
                 std::make_move_iterator(more.end()));
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) {
      throw ConfigError("output path '" + dir.string() + "' exists and is not a directory");
    }
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError("output directory '" + dir.string() +
                        "' is not empty; pass force to overwrite");
    }
  }
  fs::create_directories(dir);
}

}  // namespace

std::vector<PairedSample> obtain_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_path.empty()) return generate(cfg.generator);
  if (!fs::exists(cfg.dataset_path)) {
    throw ConfigError("dataset_path '" + cfg.dataset_path + "' does not exist");
  }
  if (cfg.dataset_path.size() >= 4 &&
      cfg.dataset_path.compare(cfg.dataset_path.size() - 4, 4, ".csv") == 0) {
    return load_dataset_csv(cfg.dataset_path);
  }
  return load_dataset(cfg.dataset_path);
}

RunOutcome cmd_run(const ExperimentConfig& cfg, bool force) {
  validate_config(cfg);
  const fs::path dir = cfg.output_dir;
  prepare_output_dir(dir, force);
  const auto t0 = std::chrono::steady_clock::now();

  RunOutcome outcome;
  RunManifest& manifest = outcome.manifest;
  manifest.config_text = emit_config(cfg);
  write_text(dir / "config.txt", manifest.config_text);
  manifest.artifacts.push_back("config.txt");

  const std::vector<PairedSample> data = obtain_dataset(cfg);

  const IterationObserver observer = [&](const DCIterationRecord& rec, const Encoder& venc,
                                         const Encoder& aenc) {
    const std::string tag = "iter-" + std::to_string(rec.iteration_index);
    std::vector<NamedTensor> tensors = encoder_tensors(venc, "visual");
    auto audio = encoder_tensors(aenc, "audio");
    tensors.insert(tensors.end(), std::make_move_iterator(audio.begin()),
                   std::make_move_iterator(audio.end()));
    save_checkpoint(tensors, (dir / ("checkpoint-" + tag + ".xdck")).string());
    write_text(dir / ("assignments-" + tag + ".csv"),
               assignments_csv(data, rec.pseudo_labels));
    manifest.artifacts.push_back("checkpoint-" + tag + ".xdck");
    manifest.artifacts.push_back("assignments-" + tag + ".csv");
  };

  outcome.run = run_deep_clustering(cfg, data, observer);
  manifest.iterations = outcome.run.records;

  std::vector<NamedTensor> final_tensors = encoder_tensors(outcome.run.visual_encoder, "visual");
  auto audio_final = encoder_tensors(outcome.run.audio_encoder, "audio");
  final_tensors.insert(final_tensors.end(), std::make_move_iterator(audio_final.begin()),
                       std::make_move_iterator(audio_final.end()));
  append_fit(final_tensors, outcome.run.final_routing.visual_fit, "fit.visual");
  append_fit(final_tensors, outcome.run.final_routing.audio_fit, "fit.audio");
  append_fit(final_tensors, outcome.run.final_routing.joint_fit, "fit.joint");
  save_checkpoint(final_tensors, (dir / "checkpoint-final.xdck").string());
  manifest.artifacts.push_back("checkpoint-final.xdck");

  outcome.eval = evaluate_run(outcome.run, data);
  manifest.eval = outcome.eval;

  outcome.metrics_json = metrics_json_text(outcome.run, outcome.eval);
  write_text(dir / "metrics.json", outcome.metrics_json);
  manifest.artifacts.push_back("metrics.json");

  write_text(dir / "cluster-report.txt", format_cluster_report(outcome.eval.report, 10, 10));
  manifest.artifacts.push_back("cluster-report.txt");

  const auto t1 = std::chrono::steady_clock::now();
  manifest.wall_clock_seconds = std::chrono::duration<double>(t1 - t0).count();
  manifest.artifacts.push_back("manifest.json");

  json mj;
  mj["format_version"] = manifest.format_version;
  mj["config"] = manifest.config_text;
  mj["metrics"] = json::parse(outcome.metrics_json);
  mj["wall_clock_seconds"] = manifest.wall_clock_seconds;
  mj["artifacts"] = manifest.artifacts;
  write_text(dir / "manifest.json", mj.dump(2) + "\n");

  return outcome;
}

std::string cmd_report(const std::string& run_dir) {
  const fs::path path = fs::path(run_dir) / "manifest.json";
  json mj;
  try {
    mj = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }

  const json& m = mj.at("metrics");
  std::ostringstream out;
  out << "run: regime=" << m.at("regime").get<std::string>() << " k=" << m.at("k").get<int>()
      << " seed=" << m.at("run_seed").get<std::uint64_t>() << "\n";
  out << "iterations: " << m.at("total_iterations").get<int>() << "\n";
  for (const auto& it : m.at("iterations")) {
    out << "  iter " << it.at("iteration").get<int>() << ": inertia=[";
    const auto inertias = it.at("kmeans_inertia").get<std::vector<double>>();
    for (std::size_t i = 0; i < inertias.size(); ++i) {
      if (i) out << ", ";
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.6g", inertias[i]);
      out << buf;
    }
    char vbuf[40], abuf[40];
    std::snprintf(vbuf, sizeof vbuf, "%.4f", it.at("visual_agreement_with_previous").get<double>());
    std::snprintf(abuf, sizeof abuf, "%.4f", it.at("audio_agreement_with_previous").get<double>());
    out << "] agreement(v=" << vbuf << ", a=" << abuf << ") epochs(v="
        << it.at("visual_epochs_ran").get<int>() << ", a=" << it.at("audio_epochs_ran").get<int>()
        << ")\n";
  }
  const json& ev = m.at("eval");
  auto acc_line = [&](const char* name, const json& p) {
    char buf[40], lr[40];
    std::snprintf(buf, sizeof buf, "%.4f", p.at("top1_accuracy").get<double>());
    std::snprintf(lr, sizeof lr, "%g", p.at("best_lr").get<double>());
    out << name << ": top1=" << buf << " best_lr=" << lr << "\n";
  };
  acc_line("linear probe", ev.at("probe"));
  acc_line("full finetune", ev.at("finetune"));
  acc_line("scratch probe", ev.at("scratch"));
  char nmi_buf[40], wall[40];
  std::snprintf(nmi_buf, sizeof nmi_buf, "%.4f", m.at("cluster_report").at("nmi").get<double>());
  std::snprintf(wall, sizeof wall, "%.2f", mj.at("wall_clock_seconds").get<double>());
  out << "cluster nmi vs truth: " << nmi_buf << "\n";
  out << "wall clock: " << wall << "s\n";
  out << "artifacts: " << mj.at("artifacts").size() << " files\n";
  return out.str();
}

std::string cmd_inspect_clusters(const std::string& run_dir, int top, int bottom) {
  const fs::path path = fs::path(run_dir) / "metrics.json";
  json mj;
  try {
    mj = json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  const ClusterReport report = report_from_json(mj.at("cluster_report"));
  return format_cluster_report(report, top, bottom);
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& base, SweepAxis axis,
                                const std::vector<std::string>& values,
                                const std::string& out_dir, bool force) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  const fs::path dir = out_dir;
  prepare_output_dir(dir, force);

  const std::vector<PairedSample> data = obtain_dataset(base);
  const std::vector<SweepRow> rows = ablation_sweep(base, axis, values, data);

  write_text(dir / "results.csv", sweep_csv(rows, axis));
  json jrows = json::array();
  for (const auto& r : rows) {
    jrows.push_back(json{{"axis_value", r.axis_value},
                         {"ok", r.ok},
                         {"error", r.error},
                         {"probe_accuracy", r.probe_accuracy},
                         {"finetune_accuracy", r.finetune_accuracy},
                         {"scratch_accuracy", r.scratch_accuracy},
                         {"nmi_vs_truth", r.nmi_vs_truth},
                         {"mean_purity", r.mean_purity},
                         {"iterations", r.iterations}});
  }
  json out;
  out["axis"] = axis == SweepAxis::regime ? "regime" : "k";
  out["rows"] = jrows;
  write_text(dir / "results.json", out.dump(2) + "\n");
  return rows;
}

}  // namespace xdc
