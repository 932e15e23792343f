#include "xdc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

namespace xdc {

namespace {

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& out, std::uint32_t v) { write_bytes(out, &v, 4); }
void write_u64(std::ofstream& out, std::uint64_t v) { write_bytes(out, &v, 8); }

struct Reader {
  std::ifstream& in;
  const std::string& path;
  std::uint64_t offset = 0;

  void need(void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw ParseError(path + ": truncated while reading " + what + " at offset " +
                       std::to_string(offset));
    }
    offset += n;
  }
  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    need(&v, 4, what);
    return v;
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    need(&v, 8, what);
    return v;
  }
};

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw ParseError("checkpoint is missing tensor '" + name + "'");
}

NamedTensor vec_tensor(std::string name, std::vector<std::uint64_t> dims,
                       std::vector<double> data) {
  std::uint64_t want = 1;
  for (auto d : dims) want *= d;
  if (want != data.size()) throw ConfigError("tensor '" + name + "': dims do not match data");
  return NamedTensor{std::move(name), std::move(dims), std::move(data)};
}

}  // namespace

void save_checkpoint(const std::vector<NamedTensor>& tensors, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open '" + path + "' for writing");
  write_bytes(out, "XDCK", 4);
  write_u32(out, 1);
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_u32(out, static_cast<std::uint32_t>(t.name.size()));
    write_bytes(out, t.name.data(), t.name.size());
    write_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    std::uint64_t count = 1;
    for (auto d : t.dims) {
      write_u64(out, d);
      count *= d;
    }
    if (count != t.data.size()) {
      throw ConfigError("tensor '" + t.name + "': dims do not match data");
    }
    write_bytes(out, t.data.data(), t.data.size() * sizeof(double));
  }
  if (!out) throw ParseError("write failed for '" + path + "'");
}

std::vector<NamedTensor> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  Reader r{in, path};

  char magic[4];
  r.need(magic, 4, "magic");
  if (std::memcmp(magic, "XDCK", 4) != 0) throw ParseError(path + ": bad magic (expected XDCK)");
  const std::uint32_t version = r.u32("version");
  if (version != 1) throw ParseError(path + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32("tensor count");

  std::vector<NamedTensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t name_len = r.u32("name length");
    if (name_len > 4096) throw ParseError(path + ": unreasonable tensor name length");
    t.name.resize(name_len);
    r.need(t.name.data(), name_len, "tensor name");
    const std::uint32_t ndims = r.u32("rank");
    if (ndims > 8) throw ParseError(path + ": unreasonable tensor rank");
    std::uint64_t total = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      t.dims.push_back(r.u64("dimension"));
      total *= t.dims.back();
    }
    if (total > (1u << 28)) throw ParseError(path + ": unreasonable tensor size");
    t.data.resize(total);
    r.need(t.data.data(), total * sizeof(double), ("tensor '" + t.name + "' data").c_str());
    tensors.push_back(std::move(t));
  }
  return tensors;
}

std::vector<NamedTensor> encoder_tensors(const Encoder& enc, const std::string& prefix) {
  std::vector<NamedTensor> out;

  std::vector<double> meta;
  meta.push_back(enc.modality == Modality::visual ? 0.0 : 1.0);
  meta.push_back(static_cast<double>(enc.body.layers.size()));
  meta.push_back(static_cast<double>(enc.heads.size()));
  for (const auto& l : enc.body.layers) {
    meta.push_back(l.in_dim);
    meta.push_back(l.out_dim);
    meta.push_back(l.act == Activation::relu ? 0.0 : 1.0);
  }
  for (const auto& h : enc.heads) {
    meta.push_back(static_cast<double>(h.id));
    meta.push_back(h.feature_dim);
    meta.push_back(h.num_classes);
  }
  out.push_back(vec_tensor(prefix + ".meta", {meta.size()}, meta));

  for (std::size_t i = 0; i < enc.body.layers.size(); ++i) {
    const auto& l = enc.body.layers[i];
    out.push_back(vec_tensor(prefix + ".body." + std::to_string(i) + ".weight",
                             {static_cast<std::uint64_t>(l.out_dim),
                              static_cast<std::uint64_t>(l.in_dim)},
                             l.weight));
    out.push_back(vec_tensor(prefix + ".body." + std::to_string(i) + ".bias",
                             {static_cast<std::uint64_t>(l.out_dim)}, l.bias));
  }
  for (const auto& h : enc.heads) {
    out.push_back(vec_tensor(prefix + ".head." + to_string(h.id) + ".weight",
                             {static_cast<std::uint64_t>(h.num_classes),
                              static_cast<std::uint64_t>(h.feature_dim)},
                             h.weight));
    out.push_back(vec_tensor(prefix + ".head." + to_string(h.id) + ".bias",
                             {static_cast<std::uint64_t>(h.num_classes)}, h.bias));
  }
  return out;
}

Encoder encoder_from_tensors(const std::vector<NamedTensor>& tensors,
                             const std::string& prefix) {
  const NamedTensor& meta = find_tensor(tensors, prefix + ".meta");
  std::size_t at = 0;
  auto next = [&]() -> double {
    if (at >= meta.data.size()) throw ParseError("checkpoint meta tensor too short");
    return meta.data[at++];
  };

  Encoder enc;
  enc.modality = next() == 0.0 ? Modality::visual : Modality::audio;
  const int n_layers = static_cast<int>(next());
  const int n_heads = static_cast<int>(next());
  if (n_layers < 1 || n_layers > 64 || n_heads < 1 || n_heads > 2) {
    throw ParseError("checkpoint meta tensor is implausible");
  }
  for (int i = 0; i < n_layers; ++i) {
    DenseLayer l;
    l.in_dim = static_cast<int>(next());
    l.out_dim = static_cast<int>(next());
    l.act = next() == 0.0 ? Activation::relu : Activation::identity;
    enc.body.layers.push_back(std::move(l));
  }
  for (int i = 0; i < n_heads; ++i) {
    ClassifierHead h;
    h.id = static_cast<HeadId>(static_cast<int>(next()));
    h.feature_dim = static_cast<int>(next());
    h.num_classes = static_cast<int>(next());
    enc.heads.push_back(std::move(h));
  }

  auto fill = [&](std::vector<double>& dst, const std::string& name, std::size_t want) {
    const NamedTensor& t = find_tensor(tensors, name);
    if (t.data.size() != want) {
      throw ParseError("tensor '" + name + "' has " + std::to_string(t.data.size()) +
                       " values, expected " + std::to_string(want));
    }
    dst = t.data;
  };
  for (std::size_t i = 0; i < enc.body.layers.size(); ++i) {
    auto& l = enc.body.layers[i];
    const std::string base = prefix + ".body." + std::to_string(i);
    fill(l.weight, base + ".weight", static_cast<std::size_t>(l.in_dim) * l.out_dim);
    fill(l.bias, base + ".bias", static_cast<std::size_t>(l.out_dim));
  }
  for (auto& h : enc.heads) {
    const std::string base = prefix + ".head." + to_string(h.id);
    fill(h.weight, base + ".weight", static_cast<std::size_t>(h.feature_dim) * h.num_classes);
    fill(h.bias, base + ".bias", static_cast<std::size_t>(h.num_classes));
  }
  return enc;
}

std::vector<NamedTensor> cluster_model_tensors(const ClusterModel& m,
                                               const std::string& prefix) {
  std::vector<NamedTensor> out;
  out.push_back(vec_tensor(prefix + ".centroids",
                           {static_cast<std::uint64_t>(m.k), static_cast<std::uint64_t>(m.dim)},
                           m.centroids));
  std::vector<double> assignments(m.assignments.begin(), m.assignments.end());
  out.push_back(vec_tensor(prefix + ".assignments", {assignments.size()}, assignments));
  out.push_back(vec_tensor(prefix + ".stats", {2},
                           {m.inertia, static_cast<double>(m.reassignment_count)}));
  return out;
}

}  // namespace xdc
