#include "xdc/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace xdc {

namespace {

constexpr int kLatentDim = 16;

// Matrix-vector product for a row-major (rows x cols) mixing matrix.
std::vector<double> mix(const std::vector<double>& m, int rows, int cols,
                        const std::vector<double>& x) {
  std::vector<double> y(rows, 0.0);
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (int c = 0; c < cols; ++c) acc += m[static_cast<std::size_t>(r) * cols + c] * x[c];
    y[r] = acc;
  }
  return y;
}

std::vector<double> normals(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void validate_spec(const GeneratorSpec& s) {
  if (s.num_classes < 2) throw ConfigError("generator.num_classes must be >= 2");
  if (s.samples_per_class < 1) throw ConfigError("generator.samples_per_class must be >= 1");
  if (s.d_v_raw < 1 || s.d_a_raw < 1) throw ConfigError("generator dims must be >= 1");
  if (!(s.noise_sigma > 0.0)) throw ConfigError("generator.noise_sigma must be > 0");
  if (s.shared_signal_strength < 0 || s.visual_private_strength < 0 ||
      s.audio_private_strength < 0) {
    throw ConfigError("generator strengths must be >= 0");
  }
}

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, 4); }
void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, 8); }

class Reader {
 public:
  Reader(std::ifstream& in, std::string path) : in_(in), path_(std::move(path)) {}

  void need(void* p, std::size_t n, const std::string& what) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError(path_ + ": truncated while reading " + what + " at offset " +
                       std::to_string(offset_));
    }
    offset_ += n;
  }
  std::uint32_t u32(const std::string& what) {
    std::uint32_t v;
    need(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    std::uint64_t v;
    need(&v, 8, what);
    return v;
  }

 private:
  std::ifstream& in_;
  std::string path_;
  std::uint64_t offset_ = 0;
};

void validate_samples(const std::vector<PairedSample>& samples) {
  for (const auto& s : samples) {
    if (s.true_class < 0) throw DataError("sample " + std::to_string(s.id) + ": negative class");
    for (double x : s.visual) {
      if (!std::isfinite(x)) throw DataError("sample " + std::to_string(s.id) + ": non-finite visual value");
    }
    for (double x : s.audio) {
      if (!std::isfinite(x)) throw DataError("sample " + std::to_string(s.id) + ": non-finite audio value");
    }
  }
}

std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string to_string(Nonlinearity n) {
  return n == Nonlinearity::none ? "none" : "relu-mixing";
}

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "none") return Nonlinearity::none;
  if (s == "relu-mixing" || s == "relu_mixing") return Nonlinearity::relu_mixing;
  throw ConfigError("unknown nonlinearity '" + s + "' (none | relu-mixing)");
}

std::vector<PairedSample> generate(const GeneratorSpec& spec) {
  validate_spec(spec);
  const int nc = spec.num_classes;
  const int spc = spec.samples_per_class;
  const int L = kLatentDim;

  // Independent streams so one knob never shifts another's draws.
  Rng proto_rng(derive_seed(spec.seed, 1));
  Rng mix_rng(derive_seed(spec.seed, 2));
  Rng noise_rng(derive_seed(spec.seed, 3));
  Rng order_rng(derive_seed(spec.seed, 4));

  // Per-class prototypes: shared latent, then per-modality private latents.
  std::vector<std::vector<double>> z(nc), pv(nc), pa(nc);
  for (int c = 0; c < nc; ++c) z[c] = normals(proto_rng, L);
  for (int c = 0; c < nc; ++c) pv[c] = normals(proto_rng, L);
  for (int c = 0; c < nc; ++c) pa[c] = normals(proto_rng, L);

  const auto a_v = normals(mix_rng, static_cast<std::size_t>(spec.d_v_raw) * L);
  const auto a_a = normals(mix_rng, static_cast<std::size_t>(spec.d_a_raw) * L);
  std::vector<double> b_v, b_a;
  if (spec.nonlinearity == Nonlinearity::relu_mixing) {
    b_v = normals(mix_rng, static_cast<std::size_t>(spec.d_v_raw) * spec.d_v_raw);
    b_a = normals(mix_rng, static_cast<std::size_t>(spec.d_a_raw) * spec.d_a_raw);
  }

  auto clean_for = [&](int c, bool visual) {
    const int d = visual ? spec.d_v_raw : spec.d_a_raw;
    const auto& priv = visual ? pv[c] : pa[c];
    const double ps = visual ? spec.visual_private_strength : spec.audio_private_strength;
    std::vector<double> latent(L);
    for (int i = 0; i < L; ++i) {
      latent[i] = spec.shared_signal_strength * z[c][i] + ps * priv[i];
    }
    auto out = mix(visual ? a_v : a_a, d, L, latent);
    if (spec.nonlinearity == Nonlinearity::relu_mixing) {
      for (double& x : out) x = x > 0.0 ? x : 0.0;
      out = mix(visual ? b_v : b_a, d, d, out);
    }
    return out;
  };

  std::vector<std::vector<double>> clean_v(nc), clean_a(nc);
  for (int c = 0; c < nc; ++c) {
    clean_v[c] = clean_for(c, true);
    clean_a[c] = clean_for(c, false);
  }

  std::vector<PairedSample> samples;
  samples.reserve(static_cast<std::size_t>(nc) * spc);
  for (int c = 0; c < nc; ++c) {
    for (int j = 0; j < spc; ++j) {
      PairedSample s;
      s.id = static_cast<std::uint64_t>(c) * spc + j;
      s.true_class = c;
      s.visual = clean_v[c];
      s.audio = clean_a[c];
      for (double& x : s.visual) x += spec.noise_sigma * noise_rng.normal();
      for (double& x : s.audio) x += spec.noise_sigma * noise_rng.normal();
      samples.push_back(std::move(s));
    }
  }
  order_rng.shuffle(samples);
  return samples;
}

void save_dataset(const std::vector<PairedSample>& samples, const std::string& path) {
  validate_samples(samples);
  const std::uint32_t d_v = samples.empty() ? 0 : static_cast<std::uint32_t>(samples[0].visual.size());
  const std::uint32_t d_a = samples.empty() ? 0 : static_cast<std::uint32_t>(samples[0].audio.size());
  const std::uint32_t nc = static_cast<std::uint32_t>(num_classes_of(samples));
  for (const auto& s : samples) {
    if (s.visual.size() != d_v || s.audio.size() != d_a) {
      throw DataError("sample " + std::to_string(s.id) + ": inconsistent dimensions");
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_bytes(out, "XDCD", 4);
  write_u32(out, 1);
  write_u64(out, samples.size());
  write_u32(out, d_v);
  write_u32(out, d_a);
  write_u32(out, nc);
  for (const auto& s : samples) {
    write_u64(out, s.id);
    write_u32(out, static_cast<std::uint32_t>(s.true_class));
    write_bytes(out, s.visual.data(), d_v * sizeof(double));
    write_bytes(out, s.audio.data(), d_a * sizeof(double));
  }
  if (!out) throw ParseError("write failed for '" + path + "'");
}

std::vector<PairedSample> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  Reader r(in, path);

  char magic[4];
  r.need(magic, 4, "magic");
  if (std::memcmp(magic, "XDCD", 4) != 0) {
    throw ParseError(path + ": bad magic (expected XDCD)");
  }
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw ParseError(path + ": unsupported version " + std::to_string(version));
  const std::uint64_t n = r.u64("sample count");
  const std::uint32_t d_v = r.u32("d_v_raw");
  const std::uint32_t d_a = r.u32("d_a_raw");
  const std::uint32_t nc = r.u32("num_classes");

  std::vector<PairedSample> samples;
  samples.reserve(std::min<std::uint64_t>(n, 1u << 20));  // corrupt counts must not OOM
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string where = "record " + std::to_string(i);
    PairedSample s;
    s.id = r.u64(where);
    s.true_class = static_cast<int>(r.u32(where));
    if (nc != 0 && (s.true_class < 0 || s.true_class >= static_cast<int>(nc))) {
      throw ParseError(path + ": " + where + " has class " + std::to_string(s.true_class) +
                       " outside [0, " + std::to_string(nc) + ")");
    }
    s.visual.resize(d_v);
    s.audio.resize(d_a);
    r.need(s.visual.data(), d_v * sizeof(double), where);
    r.need(s.audio.data(), d_a * sizeof(double), where);
    samples.push_back(std::move(s));
  }
  validate_samples(samples);
  return samples;
}

void save_dataset_csv(const std::vector<PairedSample>& samples, const std::string& path) {
  validate_samples(samples);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  const std::size_t d_v = samples.empty() ? 0 : samples[0].visual.size();
  const std::size_t d_a = samples.empty() ? 0 : samples[0].audio.size();
  out << "id,true_class";
  for (std::size_t i = 0; i < d_v; ++i) out << ",v" << i;
  for (std::size_t i = 0; i < d_a; ++i) out << ",a" << i;
  out << "\n";
  for (const auto& s : samples) {
    out << s.id << ',' << s.true_class;
    for (double x : s.visual) out << ',' << fmt_g17(x);
    for (double x : s.audio) out << ',' << fmt_g17(x);
    out << "\n";
  }
  if (!out) throw ParseError("write failed for '" + path + "'");
}

std::vector<PairedSample> load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header row");

  std::size_t d_v = 0, d_a = 0;
  {
    std::stringstream ss(line);
    std::string field;
    int idx = 0;
    while (std::getline(ss, field, ',')) {
      if (idx == 0 && field != "id") throw ParseError(path + ": header must start with id");
      if (!field.empty() && field[0] == 'v') ++d_v;
      if (!field.empty() && field[0] == 'a') ++d_a;
      ++idx;
    }
  }

  std::vector<PairedSample> samples;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 2 + d_v + d_a) {
      throw ParseError(path + ": line " + std::to_string(line_no) + " has " +
                       std::to_string(fields.size()) + " fields, expected " +
                       std::to_string(2 + d_v + d_a));
    }
    auto fail = [&](const std::string& what) {
      return ParseError(path + ": line " + std::to_string(line_no) + ": bad " + what);
    };
    PairedSample s;
    try {
      s.id = std::stoull(fields[0]);
      s.true_class = std::stoi(fields[1]);
    } catch (const std::exception&) {
      throw fail("id/class");
    }
    auto parse_real = [&](const std::string& text) {
      char* end = nullptr;
      const double v = std::strtod(text.c_str(), &end);
      if (end == text.c_str() || *end != '\0') throw fail("real value '" + text + "'");
      return v;
    };
    for (std::size_t i = 0; i < d_v; ++i) s.visual.push_back(parse_real(fields[2 + i]));
    for (std::size_t i = 0; i < d_a; ++i) s.audio.push_back(parse_real(fields[2 + d_v + i]));
    samples.push_back(std::move(s));
  }
  validate_samples(samples);
  return samples;
}

int num_classes_of(const std::vector<PairedSample>& samples) {
  int nc = 0;
  for (const auto& s : samples) nc = std::max(nc, s.true_class + 1);
  return nc;
}

SplitIndices random_split(int n, double held_out_fraction, std::uint64_t seed) {
  if (n < 1) throw ConfigError("random_split: n must be >= 1");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    throw ConfigError("random_split: fraction must lie in (0,1)");
  }
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  const int h = std::max(1, static_cast<int>(std::lround(n * held_out_fraction)));
  SplitIndices out;
  out.held_out.assign(idx.begin(), idx.begin() + h);
  out.train.assign(idx.begin() + h, idx.end());
  std::sort(out.held_out.begin(), out.held_out.end());
  std::sort(out.train.begin(), out.train.end());
  if (out.train.empty()) throw ConfigError("random_split: fraction leaves no training rows");
  return out;
}

SplitIndices stratified_split(const std::vector<int>& labels, double held_out_fraction,
                              std::uint64_t seed) {
  if (labels.empty()) throw ConfigError("stratified_split: no labels");
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0)) {
    throw ConfigError("stratified_split: fraction must lie in (0,1)");
  }
  int nc = 0;
  for (int l : labels) {
    if (l < 0) throw DataError("stratified_split: negative label");
    nc = std::max(nc, l + 1);
  }
  std::vector<std::vector<int>> groups(nc);
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) groups[labels[i]].push_back(i);

  Rng rng(seed);
  SplitIndices out;
  for (auto& g : groups) {
    if (g.empty()) continue;
    rng.shuffle(g);
    const int h = static_cast<int>(std::lround(g.size() * held_out_fraction));
    for (int i = 0; i < static_cast<int>(g.size()); ++i) {
      (i < h ? out.held_out : out.train).push_back(g[i]);
    }
  }
  std::sort(out.held_out.begin(), out.held_out.end());
  std::sort(out.train.begin(), out.train.end());
  if (out.train.empty()) throw ConfigError("stratified_split: fraction leaves no training rows");
  return out;
}

}  // namespace xdc
