#include "xdc/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"

namespace xdc {

namespace {

std::string fmt_real(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& expected,
                            const std::string& got) {
  throw ConfigError("config field '" + key + "': expected " + expected + ", got '" + got + "'");
}

long long parse_ll(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
    bad_value(key, "an integer", v);
  }
  return x;
}

double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) bad_value(key, "a real number", v);
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, "a boolean", v);
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

using Fields = std::vector<Field>;

// Helpers binding one leaf value through an accessor.
template <class T>
using Ref = std::function<T&(ExperimentConfig&)>;

void reg_int(Fields& f, std::string key, Ref<int> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) {
                 return std::to_string(r(const_cast<ExperimentConfig&>(c)));
               },
               [key, r](ExperimentConfig& c, const std::string& v) {
                 r(c) = static_cast<int>(parse_ll(key, v));
               }});
}

void reg_u64(Fields& f, std::string key, Ref<std::uint64_t> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) {
                 return std::to_string(r(const_cast<ExperimentConfig&>(c)));
               },
               [key, r](ExperimentConfig& c, const std::string& v) {
                 const long long x = parse_ll(key, v);
                 if (x < 0) bad_value(key, "a non-negative integer", v);
                 r(c) = static_cast<std::uint64_t>(x);
               }});
}

void reg_real(Fields& f, std::string key, Ref<double> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) {
                 return fmt_real(r(const_cast<ExperimentConfig&>(c)));
               },
               [key, r](ExperimentConfig& c, const std::string& v) { r(c) = parse_real(key, v); }});
}

void reg_bool(Fields& f, std::string key, Ref<bool> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) {
                 return r(const_cast<ExperimentConfig&>(c)) ? "true" : "false";
               },
               [key, r](ExperimentConfig& c, const std::string& v) { r(c) = parse_bool(key, v); }});
}

void reg_string(Fields& f, std::string key, Ref<std::string> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) { return r(const_cast<ExperimentConfig&>(c)); },
               [key, r](ExperimentConfig& c, const std::string& v) { r(c) = v; }});
}

void reg_int_list(Fields& f, std::string key, Ref<std::vector<int>> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) {
                 std::string out;
                 for (int x : r(const_cast<ExperimentConfig&>(c))) {
                   if (!out.empty()) out += ',';
                   out += std::to_string(x);
                 }
                 return out;
               },
               [key, r](ExperimentConfig& c, const std::string& v) {
                 std::vector<int> xs;
                 for (const auto& item : split_list(v)) {
                   xs.push_back(static_cast<int>(parse_ll(key, item)));
                 }
                 r(c) = std::move(xs);
               }});
}

void reg_real_list(Fields& f, std::string key, Ref<std::vector<double>> r) {
  f.push_back({key,
               [r](const ExperimentConfig& c) {
                 std::string out;
                 for (double x : r(const_cast<ExperimentConfig&>(c))) {
                   if (!out.empty()) out += ',';
                   out += fmt_real(x);
                 }
                 return out;
               },
               [key, r](ExperimentConfig& c, const std::string& v) {
                 std::vector<double> xs;
                 for (const auto& item : split_list(v)) xs.push_back(parse_real(key, item));
                 r(c) = std::move(xs);
               }});
}

void reg_schedule(Fields& f, const std::string& p, Ref<TrainingSchedule> r) {
  reg_int(f, p + ".epoch_size", [r](ExperimentConfig& c) -> int& { return r(c).epoch_size; });
  reg_int(f, p + ".batch_size", [r](ExperimentConfig& c) -> int& { return r(c).batch_size; });
  reg_real(f, p + ".base_lr", [r](ExperimentConfig& c) -> double& { return r(c).base_lr; });
  reg_int(f, p + ".warmup_epochs", [r](ExperimentConfig& c) -> int& { return r(c).warmup_epochs; });
  reg_int(f, p + ".step_epochs", [r](ExperimentConfig& c) -> int& { return r(c).step_epochs; });
  reg_real(f, p + ".lr_decay", [r](ExperimentConfig& c) -> double& { return r(c).lr_decay; });
  reg_int(f, p + ".total_epochs", [r](ExperimentConfig& c) -> int& { return r(c).total_epochs; });
  reg_real(f, p + ".weight_decay", [r](ExperimentConfig& c) -> double& { return r(c).weight_decay; });
  reg_bool(f, p + ".early_stop", [r](ExperimentConfig& c) -> bool& { return r(c).early_stop; });
  reg_int(f, p + ".early_stop_patience",
          [r](ExperimentConfig& c) -> int& { return r(c).early_stop_patience; });
  reg_real(f, p + ".momentum", [r](ExperimentConfig& c) -> double& { return r(c).momentum; });
}

const Fields& fields() {
  static const Fields f = [] {
    Fields f;
    f.push_back({"regime", [](const ExperimentConfig& c) { return to_string(c.regime); },
                 [](ExperimentConfig& c, const std::string& v) { c.regime = parse_regime(v); }});
    reg_int(f, "k", [](ExperimentConfig& c) -> int& { return c.k; });
    reg_u64(f, "run_seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.run_seed; });
    reg_string(f, "output_dir", [](ExperimentConfig& c) -> std::string& { return c.output_dir; });
    reg_int(f, "max_dc_iterations",
            [](ExperimentConfig& c) -> int& { return c.max_dc_iterations; });
    reg_real(f, "agreement_stop", [](ExperimentConfig& c) -> double& { return c.agreement_stop; });
    reg_real(f, "val_split", [](ExperimentConfig& c) -> double& { return c.val_split; });
    reg_string(f, "dataset_path", [](ExperimentConfig& c) -> std::string& { return c.dataset_path; });
    reg_bool(f, "normalize_features",
             [](ExperimentConfig& c) -> bool& { return c.normalize_features; });
    reg_bool(f, "whiten_features", [](ExperimentConfig& c) -> bool& { return c.whiten_features; });

    reg_int(f, "generator.num_classes",
            [](ExperimentConfig& c) -> int& { return c.generator.num_classes; });
    reg_int(f, "generator.samples_per_class",
            [](ExperimentConfig& c) -> int& { return c.generator.samples_per_class; });
    reg_int(f, "generator.d_v_raw", [](ExperimentConfig& c) -> int& { return c.generator.d_v_raw; });
    reg_int(f, "generator.d_a_raw", [](ExperimentConfig& c) -> int& { return c.generator.d_a_raw; });
    reg_real(f, "generator.shared_signal_strength",
             [](ExperimentConfig& c) -> double& { return c.generator.shared_signal_strength; });
    reg_real(f, "generator.visual_private_strength",
             [](ExperimentConfig& c) -> double& { return c.generator.visual_private_strength; });
    reg_real(f, "generator.audio_private_strength",
             [](ExperimentConfig& c) -> double& { return c.generator.audio_private_strength; });
    reg_real(f, "generator.noise_sigma",
             [](ExperimentConfig& c) -> double& { return c.generator.noise_sigma; });
    f.push_back({"generator.nonlinearity",
                 [](const ExperimentConfig& c) { return to_string(c.generator.nonlinearity); },
                 [](ExperimentConfig& c, const std::string& v) {
                   c.generator.nonlinearity = parse_nonlinearity(v);
                 }});
    reg_u64(f, "generator.seed",
            [](ExperimentConfig& c) -> std::uint64_t& { return c.generator.seed; });

    reg_int_list(f, "encoder.visual_dims",
                 [](ExperimentConfig& c) -> std::vector<int>& { return c.visual_hidden_dims; });
    reg_int_list(f, "encoder.audio_dims",
                 [](ExperimentConfig& c) -> std::vector<int>& { return c.audio_hidden_dims; });

    reg_schedule(f, "pretrain",
                 [](ExperimentConfig& c) -> TrainingSchedule& { return c.pretrain; });
    reg_schedule(f, "finetune",
                 [](ExperimentConfig& c) -> TrainingSchedule& { return c.finetune; });

    reg_int(f, "kmeans.max_iters", [](ExperimentConfig& c) -> int& { return c.kmeans.max_iters; });
    reg_real(f, "kmeans.tol", [](ExperimentConfig& c) -> double& { return c.kmeans.tol; });
    reg_int(f, "kmeans.restarts", [](ExperimentConfig& c) -> int& { return c.kmeans.restarts; });

    reg_real_list(f, "eval.lr_full",
                  [](ExperimentConfig& c) -> std::vector<double>& { return c.eval.lr_full; });
    reg_real_list(f, "eval.lr_fc",
                  [](ExperimentConfig& c) -> std::vector<double>& { return c.eval.lr_fc; });
    reg_real(f, "eval.test_fraction",
             [](ExperimentConfig& c) -> double& { return c.eval.test_fraction; });
    reg_u64(f, "eval.split_seed",
            [](ExperimentConfig& c) -> std::uint64_t& { return c.eval.split_seed; });
    return f;
  }();
  return f;
}

void set_field(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& field : fields()) {
    if (field.key == key) {
      field.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void check(bool ok, const std::string& field, const std::string& rule) {
  if (!ok) throw ConfigError("config field '" + field + "': " + rule);
}

void validate_schedule(const TrainingSchedule& s, const std::string& p) {
  check(s.epoch_size >= 1, p + ".epoch_size", "must be >= 1");
  check(s.batch_size >= 1, p + ".batch_size", "must be >= 1");
  check(s.base_lr > 0, p + ".base_lr", "must be > 0");
  check(s.warmup_epochs >= 0, p + ".warmup_epochs", "must be >= 0");
  check(s.step_epochs >= 1, p + ".step_epochs", "must be >= 1");
  check(s.lr_decay > 0 && s.lr_decay <= 1, p + ".lr_decay", "must lie in (0, 1]");
  check(s.total_epochs >= 0, p + ".total_epochs", "must be >= 0");
  check(s.weight_decay >= 0, p + ".weight_decay", "must be >= 0");
  check(s.early_stop_patience >= 1, p + ".early_stop_patience", "must be >= 1");
  check(s.momentum >= 0 && s.momentum < 1, p + ".momentum", "must lie in [0, 1)");
}

std::string json_scalar(const std::string& key, const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  if (j.is_number() || j.is_number_integer()) return j.dump();
  throw ConfigError("config field '" + key + "': unsupported JSON value " + j.dump());
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, std::string>>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
    }
    return;
  }
  if (j.is_array()) {
    std::string joined;
    for (const auto& el : j) {
      if (!joined.empty()) joined += ',';
      joined += json_scalar(prefix, el);
    }
    out.emplace_back(prefix, joined);
    return;
  }
  out.emplace_back(prefix, json_scalar(prefix, j));
}

ExperimentConfig parse_config_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("config JSON: top level must be an object");
  std::vector<std::pair<std::string, std::string>> kv;
  flatten_json(j, "", kv);
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& [key, value] : kv) {
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    set_field(cfg, key, value);
  }
  validate_config(cfg);
  return cfg;
}

}  // namespace

void validate_config(const ExperimentConfig& cfg) {
  check(cfg.k >= 2, "k", "must be >= 2");
  check(cfg.max_dc_iterations >= 1, "max_dc_iterations", "must be >= 1");
  check(cfg.agreement_stop > 0 && cfg.agreement_stop <= 1, "agreement_stop",
        "must lie in (0, 1]");
  check(cfg.val_split > 0 && cfg.val_split < 1, "val_split", "must lie in (0, 1)");
  check(!cfg.output_dir.empty(), "output_dir", "must not be empty");

  check(cfg.generator.num_classes >= 2, "generator.num_classes", "must be >= 2");
  check(cfg.generator.samples_per_class >= 1, "generator.samples_per_class", "must be >= 1");
  check(cfg.generator.d_v_raw >= 1, "generator.d_v_raw", "must be >= 1");
  check(cfg.generator.d_a_raw >= 1, "generator.d_a_raw", "must be >= 1");
  check(cfg.generator.noise_sigma > 0, "generator.noise_sigma", "must be > 0");
  check(cfg.generator.shared_signal_strength >= 0, "generator.shared_signal_strength",
        "must be >= 0");
  check(cfg.generator.visual_private_strength >= 0, "generator.visual_private_strength",
        "must be >= 0");
  check(cfg.generator.audio_private_strength >= 0, "generator.audio_private_strength",
        "must be >= 0");

  check(!cfg.visual_hidden_dims.empty(), "encoder.visual_dims", "must not be empty");
  check(!cfg.audio_hidden_dims.empty(), "encoder.audio_dims", "must not be empty");
  for (int d : cfg.visual_hidden_dims) check(d >= 1, "encoder.visual_dims", "dims must be >= 1");
  for (int d : cfg.audio_hidden_dims) check(d >= 1, "encoder.audio_dims", "dims must be >= 1");

  validate_schedule(cfg.pretrain, "pretrain");
  validate_schedule(cfg.finetune, "finetune");

  check(cfg.kmeans.max_iters >= 1, "kmeans.max_iters", "must be >= 1");
  check(cfg.kmeans.tol >= 0, "kmeans.tol", "must be >= 0");
  check(cfg.kmeans.restarts >= 1, "kmeans.restarts", "must be >= 1");

  check(!cfg.eval.lr_full.empty(), "eval.lr_full", "must not be empty");
  check(!cfg.eval.lr_fc.empty(), "eval.lr_fc", "must not be empty");
  for (double lr : cfg.eval.lr_full) check(lr > 0, "eval.lr_full", "rates must be > 0");
  for (double lr : cfg.eval.lr_fc) check(lr > 0, "eval.lr_fc", "rates must be > 0");
  check(cfg.eval.test_fraction > 0 && cfg.eval.test_fraction < 1, "eval.test_fraction",
        "must lie in (0, 1)");
}

ExperimentConfig parse_config_text(const std::string& text) {
  const std::size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_config_json(text);

  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw ParseError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ParseError("config line " + std::to_string(line_no) + ": empty key");
    }
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    set_field(cfg, key, value);
  }
  validate_config(cfg);
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  set_field(cfg, key, value);
}

std::string emit_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& field : fields()) {
    out += field.key;
    out += " = ";
    out += field.get(cfg);
    out += "\n";
  }
  return out;
}

}  // namespace xdc
