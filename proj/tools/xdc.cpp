#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xdc/runner.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string regime;
  int k = -1;
  long long seed = -1;
  std::string out;
  std::vector<std::string> overrides;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "config file (flat text or JSON)");
  cmd->add_option("--regime", o.regime, "sdc|mdc|cdc|xdc|xdc-same-visual|xdc-same-audio");
  cmd->add_option("--k", o.k, "cluster count");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--out", o.out, "output directory / file");
  cmd->add_option("--set", o.overrides, "config override key=value (repeatable)");
  cmd->add_flag("--force", o.force, "allow writing into a non-empty output directory");
}

xdc::ExperimentConfig build_config(const CommonOpts& o) {
  xdc::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = xdc::parse_config_file(o.config_path);
  if (!o.regime.empty()) cfg.regime = xdc::parse_regime(o.regime);
  if (o.k >= 0) cfg.k = o.k;
  if (o.seed >= 0) cfg.run_seed = static_cast<std::uint64_t>(o.seed);
  if (!o.out.empty()) cfg.output_dir = o.out;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw xdc::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    xdc::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  xdc::validate_config(cfg);
  return cfg;
}

int run_main(const CommonOpts& o) {
  const xdc::ExperimentConfig cfg = build_config(o);
  const xdc::RunOutcome outcome = xdc::cmd_run(cfg, o.force);
  std::printf("run complete: %d iterations\n", outcome.run.total_iterations);
  std::printf("linear probe top1:  %.4f (lr %g)\n", outcome.eval.probe.top1_accuracy,
              outcome.eval.probe.best_lr);
  std::printf("full finetune top1: %.4f (lr %g)\n", outcome.eval.finetune.top1_accuracy,
              outcome.eval.finetune.best_lr);
  std::printf("scratch probe top1: %.4f (lr %g)\n", outcome.eval.scratch.top1_accuracy,
              outcome.eval.scratch.best_lr);
  std::printf("cluster nmi vs truth: %.4f\n", outcome.eval.report.nmi);
  std::printf("artifacts in %s\n", cfg.output_dir.c_str());
  return 0;
}

int sweep_main(const CommonOpts& o, const std::string& axis_name,
               const std::vector<std::string>& values) {
  xdc::ExperimentConfig cfg = build_config(o);
  const xdc::SweepAxis axis = xdc::parse_sweep_axis(axis_name);
  const std::string out_dir = o.out.empty() ? "xdc-sweep" : o.out;
  const auto rows = xdc::cmd_sweep(cfg, axis, values, out_dir, o.force);
  std::printf("%-18s %-6s %10s %10s %10s %8s\n", axis_name.c_str(), "ok", "probe", "finetune",
              "scratch", "nmi");
  for (const auto& r : rows) {
    if (r.ok) {
      std::printf("%-18s %-6s %10.4f %10.4f %10.4f %8.4f\n", r.axis_value.c_str(), "yes",
                  r.probe_accuracy, r.finetune_accuracy, r.scratch_accuracy, r.nmi_vs_truth);
    } else {
      std::printf("%-18s %-6s error: %s\n", r.axis_value.c_str(), "no", r.error.c_str());
    }
  }
  std::printf("results in %s\n", out_dir.c_str());
  return 0;
}

int gen_data_main(const CommonOpts& o) {
  if (o.out.empty()) throw xdc::ConfigError("gen-data requires --out <file>");
  xdc::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = xdc::parse_config_file(o.config_path);
  if (o.seed >= 0) cfg.generator.seed = static_cast<std::uint64_t>(o.seed);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw xdc::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    xdc::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  const auto data = xdc::generate(cfg.generator);
  const bool csv = o.out.size() >= 4 && o.out.compare(o.out.size() - 4, 4, ".csv") == 0;
  if (csv) {
    xdc::save_dataset_csv(data, o.out);
  } else {
    xdc::save_dataset(data, o.out);
  }
  std::printf("wrote %zu samples to %s\n", data.size(), o.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic cross-modal deep-clustering experiments"};
  app.require_subcommand(1);

  CommonOpts run_opts;
  CLI::App* run_cmd = app.add_subcommand("run", "run one experiment end to end");
  add_common(run_cmd, run_opts);

  CommonOpts sweep_opts;
  std::string sweep_axis;
  std::vector<std::string> sweep_values;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "run one experiment per axis value");
  add_common(sweep_cmd, sweep_opts);
  sweep_cmd->add_option("--axis", sweep_axis, "regime or k")->required();
  sweep_cmd->add_option("--values", sweep_values, "axis values")->required()->delimiter(',');

  std::string report_dir;
  CLI::App* report_cmd = app.add_subcommand("report", "summarize a finished run directory");
  report_cmd->add_option("run_dir", report_dir, "run directory")->required();

  std::string inspect_dir;
  int top = 10, bottom = 10;
  CLI::App* inspect_cmd =
      app.add_subcommand("inspect-clusters", "ranked cluster table from a finished run");
  inspect_cmd->add_option("run_dir", inspect_dir, "run directory")->required();
  inspect_cmd->add_option("--top", top, "highest-purity clusters to show");
  inspect_cmd->add_option("--bottom", bottom, "lowest-purity clusters to show");

  CommonOpts gen_opts;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a synthetic paired dataset");
  add_common(gen_cmd, gen_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return run_main(run_opts);
    if (sweep_cmd->parsed()) return sweep_main(sweep_opts, sweep_axis, sweep_values);
    if (report_cmd->parsed()) {
      std::fputs(xdc::cmd_report(report_dir).c_str(), stdout);
      return 0;
    }
    if (inspect_cmd->parsed()) {
      std::fputs(xdc::cmd_inspect_clusters(inspect_dir, top, bottom).c_str(), stdout);
      return 0;
    }
    if (gen_cmd->parsed()) return gen_data_main(gen_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
