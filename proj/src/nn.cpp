#include "xdc/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace xdc {

namespace {

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw DataError(std::string("non-finite ") + what);
  }
}

double activate(double z, Activation a) {
  return a == Activation::relu ? (z > 0.0 ? z : 0.0) : z;
}

double activate_grad(double z, Activation a) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

// y = W x + b
void affine(const std::vector<double>& w, const std::vector<double>& b, int out_dim,
            int in_dim, std::span<const double> x, std::vector<double>& y) {
  y.assign(static_cast<std::size_t>(out_dim), 0.0);
  for (int r = 0; r < out_dim; ++r) {
    double acc = b[r];
    const double* wr = w.data() + static_cast<std::size_t>(r) * in_dim;
    for (int c = 0; c < in_dim; ++c) acc += wr[c] * x[c];
    y[r] = acc;
  }
}

GradientTape::LayerGrad zero_grad(int out_dim, int in_dim) {
  GradientTape::LayerGrad g;
  g.dweight.assign(static_cast<std::size_t>(out_dim) * in_dim, 0.0);
  g.dbias.assign(static_cast<std::size_t>(out_dim), 0.0);
  return g;
}

void he_uniform(std::vector<double>& w, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  for (double& x : w) x = rng.uniform(-limit, limit);
}

void hash_mix(std::uint64_t& h, const std::vector<double>& v) {
  for (double x : v) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(x));
}

void update_group(std::vector<double>& theta, const std::vector<double>& grad,
                  std::vector<double>& vel, double lr, double wd, double momentum) {
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g)) throw TrainingDivergence("non-finite gradient in sgd_step");
    vel[i] = momentum * vel[i] + (g + wd * theta[i]);
    theta[i] -= lr * vel[i];
  }
}

}  // namespace

std::string to_string(HeadId h) {
  switch (h) {
    case HeadId::own: return "own";
    case HeadId::cross: return "cross";
    case HeadId::joint: return "joint";
  }
  return "?";
}

std::string to_string(Modality m) {
  return m == Modality::visual ? "visual" : "audio";
}

bool Encoder::has_head(HeadId id) const {
  for (const auto& h : heads) {
    if (h.id == id) return true;
  }
  return false;
}

const ClassifierHead& Encoder::head(HeadId id) const {
  for (const auto& h : heads) {
    if (h.id == id) return h;
  }
  throw ConfigError("encoder has no head '" + to_string(id) + "'");
}

ClassifierHead& Encoder::head(HeadId id) {
  return const_cast<ClassifierHead&>(std::as_const(*this).head(id));
}

void GradientTape::zero() {
  for (auto& g : body) {
    std::fill(g.dweight.begin(), g.dweight.end(), 0.0);
    std::fill(g.dbias.begin(), g.dbias.end(), 0.0);
  }
  for (auto& g : heads) {
    std::fill(g.dweight.begin(), g.dweight.end(), 0.0);
    std::fill(g.dbias.begin(), g.dbias.end(), 0.0);
  }
}

GradientTape make_tape(const Encoder& enc) {
  GradientTape t;
  for (const auto& l : enc.body.layers) t.body.push_back(zero_grad(l.out_dim, l.in_dim));
  for (const auto& h : enc.heads) t.heads.push_back(zero_grad(h.num_classes, h.feature_dim));
  return t;
}

MomentumState make_momentum(const Encoder& enc) {
  const GradientTape t = make_tape(enc);
  return MomentumState{t.body, t.heads};
}

std::vector<double> body_forward(const DenseNet& body, std::span<const double> x) {
  if (static_cast<int>(x.size()) != body.input_dim()) {
    throw ConfigError("forward: input has dim " + std::to_string(x.size()) +
                      ", body expects " + std::to_string(body.input_dim()));
  }
  check_finite(x, "input");
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> z;
  for (const auto& l : body.layers) {
    affine(l.weight, l.bias, l.out_dim, l.in_dim, a, z);
    a.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = activate(z[i], l.act);
  }
  return a;
}

ForwardTrace forward(const Encoder& enc, std::span<const double> x, HeadId head_id) {
  if (static_cast<int>(x.size()) != enc.body.input_dim()) {
    throw ConfigError("forward: input has dim " + std::to_string(x.size()) +
                      ", body expects " + std::to_string(enc.body.input_dim()));
  }
  check_finite(x, "input");
  const ClassifierHead& head = enc.head(head_id);

  ForwardTrace t;
  t.head = head_id;
  std::vector<double> a(x.begin(), x.end());
  for (const auto& l : enc.body.layers) {
    t.inputs.push_back(a);
    std::vector<double> z;
    affine(l.weight, l.bias, l.out_dim, l.in_dim, a, z);
    t.preacts.push_back(z);
    a.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) a[i] = activate(z[i], l.act);
  }
  t.features = a;
  affine(head.weight, head.bias, head.num_classes, head.feature_dim, t.features, t.logits);
  return t;
}

LossGrad softmax_ce_loss(std::span<const double> logits, int label) {
  const int c = static_cast<int>(logits.size());
  if (label < 0 || label >= c) {
    throw DataError("label " + std::to_string(label) + " out of range for " +
                    std::to_string(c) + " classes");
  }
  check_finite(logits, "logits");
  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  LossGrad out;
  out.dlogits.resize(logits.size());
  double sum = 0.0;
  for (int i = 0; i < c; ++i) {
    out.dlogits[i] = std::exp(logits[i] - m);
    sum += out.dlogits[i];
  }
  out.loss = std::log(sum) + m - logits[label];
  for (int i = 0; i < c; ++i) out.dlogits[i] /= sum;
  out.dlogits[label] -= 1.0;
  return out;
}

void backward(const Encoder& enc, const ForwardTrace& trace,
              std::span<const double> dlogits, GradientTape& tape) {
  if (tape.body.size() != enc.body.layers.size() || tape.heads.size() != enc.heads.size()) {
    throw ConfigError("backward: tape does not mirror the encoder");
  }
  const ClassifierHead& head = enc.head(trace.head);
  if (static_cast<int>(dlogits.size()) != head.num_classes) {
    throw ConfigError("backward: dlogits dim mismatch");
  }
  std::size_t head_index = 0;
  while (enc.heads[head_index].id != trace.head) ++head_index;

  // Head: dW += g f^T, db += g, then push g through the head weights.
  auto& hg = tape.heads[head_index];
  std::vector<double> da(head.feature_dim, 0.0);
  for (int r = 0; r < head.num_classes; ++r) {
    const double g = dlogits[r];
    hg.dbias[r] += g;
    const std::size_t off = static_cast<std::size_t>(r) * head.feature_dim;
    for (int c = 0; c < head.feature_dim; ++c) {
      hg.dweight[off + c] += g * trace.features[c];
      da[c] += g * head.weight[off + c];
    }
  }

  for (int li = static_cast<int>(enc.body.layers.size()) - 1; li >= 0; --li) {
    const auto& l = enc.body.layers[li];
    auto& lg = tape.body[li];
    const auto& z = trace.preacts[li];
    const auto& in = trace.inputs[li];
    std::vector<double> dz(l.out_dim);
    for (int r = 0; r < l.out_dim; ++r) dz[r] = da[r] * activate_grad(z[r], l.act);
    std::vector<double> din(l.in_dim, 0.0);
    for (int r = 0; r < l.out_dim; ++r) {
      const double g = dz[r];
      lg.dbias[r] += g;
      const std::size_t off = static_cast<std::size_t>(r) * l.in_dim;
      for (int c = 0; c < l.in_dim; ++c) {
        lg.dweight[off + c] += g * in[c];
        din[c] += g * l.weight[off + c];
      }
    }
    da = std::move(din);
  }
}

void sgd_step(Encoder& enc, const GradientTape& tape, double lr_now,
              double weight_decay, double momentum, MomentumState& state) {
  if (tape.body.size() != enc.body.layers.size() || tape.heads.size() != enc.heads.size()) {
    throw ConfigError("sgd_step: tape does not mirror the encoder");
  }
  for (std::size_t i = 0; i < enc.body.layers.size(); ++i) {
    auto& l = enc.body.layers[i];
    update_group(l.weight, tape.body[i].dweight, state.body[i].dweight, lr_now,
                 weight_decay, momentum);
    update_group(l.bias, tape.body[i].dbias, state.body[i].dbias, lr_now,
                 weight_decay, momentum);
  }
  for (std::size_t i = 0; i < enc.heads.size(); ++i) {
    auto& h = enc.heads[i];
    update_group(h.weight, tape.heads[i].dweight, state.heads[i].dweight, lr_now,
                 weight_decay, momentum);
    update_group(h.bias, tape.heads[i].dbias, state.heads[i].dbias, lr_now,
                 weight_decay, momentum);
  }
}

double lr_at(const TrainingSchedule& s, int epoch) {
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw ConfigError("lr_at: epoch " + std::to_string(epoch) + " outside [0, te)");
  }
  if (s.step_epochs < 1) throw ConfigError("lr_at: step_epochs must be >= 1");
  if (epoch < s.warmup_epochs) {
    return s.base_lr * (epoch + 1) / s.warmup_epochs;
  }
  const int steps = (epoch - s.warmup_epochs) / s.step_epochs;
  double f = 1.0;
  for (int i = 0; i < steps; ++i) f *= s.lr_decay;
  return s.base_lr * f;
}

bool early_stop_check(const std::vector<double>& val_losses, int patience) {
  if (patience < 1) throw ConfigError("early_stop_check: patience must be >= 1");
  const int n = static_cast<int>(val_losses.size());
  if (n < patience + 1) return false;
  for (int i = 0; i < patience; ++i) {
    if (!(val_losses[n - 1 - i] > val_losses[n - 2 - i])) return false;
  }
  return true;
}

DenseNet make_dense_net(const std::vector<int>& dims, Rng& rng, Activation act) {
  if (dims.size() < 2) throw ConfigError("make_dense_net: need at least [in, out] dims");
  for (int d : dims) {
    if (d < 1) throw ConfigError("make_dense_net: layer dims must be positive");
  }
  DenseNet net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.in_dim = dims[i];
    l.out_dim = dims[i + 1];
    l.weight.resize(static_cast<std::size_t>(l.in_dim) * l.out_dim);
    l.bias.assign(static_cast<std::size_t>(l.out_dim), 0.0);
    l.act = act;
    he_uniform(l.weight, l.in_dim, rng);
    net.layers.push_back(std::move(l));
  }
  return net;
}

ClassifierHead make_head(HeadId id, int feature_dim, int num_classes, Rng& rng) {
  if (num_classes < 2) throw ConfigError("make_head: num_classes must be >= 2");
  if (feature_dim < 1) throw ConfigError("make_head: feature_dim must be >= 1");
  ClassifierHead h;
  h.id = id;
  h.feature_dim = feature_dim;
  h.num_classes = num_classes;
  h.weight.resize(static_cast<std::size_t>(feature_dim) * num_classes);
  h.bias.assign(static_cast<std::size_t>(num_classes), 0.0);
  he_uniform(h.weight, feature_dim, rng);
  return h;
}

Encoder make_encoder(Modality modality, const std::vector<int>& body_dims,
                     const std::vector<HeadId>& head_ids, int num_classes, Rng& rng) {
  if (head_ids.empty() || head_ids.size() > 2) {
    throw ConfigError("make_encoder: encoders carry one or two heads");
  }
  Encoder e;
  e.modality = modality;
  e.body = make_dense_net(body_dims, rng);
  for (HeadId id : head_ids) {
    e.heads.push_back(make_head(id, e.body.output_dim(), num_classes, rng));
  }
  return e;
}

void reset_heads(Encoder& enc, Rng& rng) {
  for (auto& h : enc.heads) {
    he_uniform(h.weight, h.feature_dim, rng);
    std::fill(h.bias.begin(), h.bias.end(), 0.0);
  }
}

std::uint64_t parameter_hash(const DenseNet& body) {
  std::uint64_t h = 0x517cc1b727220a95ULL;
  for (const auto& l : body.layers) {
    hash_mix(h, l.weight);
    hash_mix(h, l.bias);
  }
  return h;
}

std::uint64_t parameter_hash(const Encoder& enc) {
  std::uint64_t h = parameter_hash(enc.body);
  for (const auto& head : enc.heads) {
    hash_mix(h, head.weight);
    hash_mix(h, head.bias);
  }
  return h;
}

std::size_t parameter_count(const Encoder& enc) {
  std::size_t n = 0;
  for (const auto& l : enc.body.layers) n += l.weight.size() + l.bias.size();
  for (const auto& h : enc.heads) n += h.weight.size() + h.bias.size();
  return n;
}

}  // namespace xdc
