#include "lintomo/network.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "lintomo/error.hpp"
#include "lintomo/numeric.hpp"

namespace lintomo {

using nlohmann::json;

// ------------------------------------------------------------- ModelSpec

void ModelSpec::validate() const {
  if (n < 1 || numz < 1 || numr < 1) {
    throw Error(ErrorKind::kInvalidSpec, "n, numz and numr must all be >= 1");
  }
}

std::string ModelSpec::name() const {
  std::string s = backbone == Backbone::kVgg ? "VggOnion" : "ResOnion";
  if (use_pi) s += "_PI";
  return s;
}

ModelSpec ModelSpec::reference_layout(Backbone backbone, bool use_pi, ActivationKind head,
                                      int n, int numz, int numr) {
  ModelSpec s;
  s.backbone = backbone;
  s.use_pi = use_pi;
  s.final_activation = head;
  s.n = n;
  s.numz = numz;
  s.numr = numr;
  s.input_mode = InputMode::kPixelAffine;
  s.batch_norm = true;
  s.res_pool_without_pi = false;
  return s;
}

void to_json(json& j, const ModelSpec& s) {
  j = json{{"backbone", s.backbone == Backbone::kVgg ? "vgg" : "res"},
           {"use_pi", s.use_pi},
           {"final_activation", s.final_activation == ActivationKind::kRelu ? "relu" : "softplus"},
           {"n", s.n},
           {"numz", s.numz},
           {"numr", s.numr},
           {"input_mode", s.input_mode == InputMode::kBroadcastConv ? "broadcast_conv" : "pixel_affine"},
           {"batch_norm", s.batch_norm},
           {"res_pool_without_pi", s.res_pool_without_pi}};
}

void from_json(const json& j, ModelSpec& s) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidConfig, "model spec must be an object");
  static const char* known[] = {"backbone",   "use_pi",     "final_activation",
                                "n",          "numz",       "numr",
                                "input_mode", "batch_norm", "res_pool_without_pi"};
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
        std::end(known)) {
      throw Error(ErrorKind::kInvalidConfig, "unknown model field '" + key + "'");
    }
  }
  ModelSpec out;
  try {
    const std::string bb = j.value("backbone", std::string("vgg"));
    if (bb == "vgg") {
      out.backbone = Backbone::kVgg;
    } else if (bb == "res") {
      out.backbone = Backbone::kRes;
    } else {
      throw Error(ErrorKind::kInvalidConfig, "backbone must be 'vgg' or 'res', got '" + bb + "'");
    }
    const std::string act = j.value("final_activation", std::string("softplus"));
    if (act == "relu") {
      out.final_activation = ActivationKind::kRelu;
    } else if (act == "softplus") {
      out.final_activation = ActivationKind::kSoftplus;
    } else {
      throw Error(ErrorKind::kInvalidConfig, "final_activation must be 'relu' or 'softplus'");
    }
    const std::string mode = j.value("input_mode", std::string("broadcast_conv"));
    if (mode == "broadcast_conv") {
      out.input_mode = InputMode::kBroadcastConv;
    } else if (mode == "pixel_affine") {
      out.input_mode = InputMode::kPixelAffine;
    } else {
      throw Error(ErrorKind::kInvalidConfig, "input_mode must be 'broadcast_conv' or 'pixel_affine'");
    }
    out.use_pi = j.value("use_pi", false);
    out.n = j.at("n").get<int>();
    out.numz = j.at("numz").get<int>();
    out.numr = j.at("numr").get<int>();
    out.batch_norm = j.value("batch_norm", false);
    out.res_pool_without_pi = j.value("res_pool_without_pi", true);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, std::string("model spec: ") + e.what());
  }
  out.validate();
  s = out;
}

std::string spec_hash(const ModelSpec& spec) {
  Fnv1a h;
  h.update(json(spec).dump());
  return h.hex();
}

// --------------------------------------------------------------- builders

namespace {

template <typename T>
void add_conv(Sequential<T>& seq, const std::string& name, int in, int out, bool bn) {
  seq.add(std::make_unique<Conv2d<T>>(name, in, out, 3, 1, 1));
  if (bn) seq.add(std::make_unique<BatchNorm2d<T>>(name + "_bn", out));
  seq.add(std::make_unique<Activation<T>>(ActivationKind::kRelu));
}

template <typename T>
std::unique_ptr<Sequential<T>> build_lift(const ModelSpec& s) {
  auto seq = std::make_unique<Sequential<T>>();
  seq->add(std::make_unique<Broadcast<T>>(s.numz, s.numr));
  if (s.input_mode == InputMode::kBroadcastConv) {
    seq->add(std::make_unique<Conv2d<T>>("lift.conv", s.n, s.n, 3, 1, 1));
  } else {
    seq->add(std::make_unique<PixelAffine<T>>("lift.affine", s.numz, s.numr));
  }
  return seq;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_vgg(const ModelSpec& s) {
  const int n = s.n;
  auto seq = std::make_unique<Sequential<T>>();
  add_conv(*seq, "backbone.conv1.0", n, 2 * n, s.batch_norm);
  add_conv(*seq, "backbone.conv1.1", 2 * n, 2 * n, s.batch_norm);
  seq->add(std::make_unique<MaxPool2d<T>>());
  add_conv(*seq, "backbone.conv2.0", 2 * n, 4 * n, s.batch_norm);
  add_conv(*seq, "backbone.conv2.1", 4 * n, 4 * n, s.batch_norm);
  add_conv(*seq, "backbone.conv2.2", 4 * n, 4 * n, s.batch_norm);
  seq->add(std::make_unique<MaxPool2d<T>>());
  add_conv(*seq, "backbone.conv3.0", 4 * n, 8 * n, s.batch_norm);
  add_conv(*seq, "backbone.conv3.1", 8 * n, 8 * n, s.batch_norm);
  add_conv(*seq, "backbone.conv3.2", 8 * n, 8 * n, s.batch_norm);
  seq->add(std::make_unique<AdaptiveMaxPool2d<T>>(3, 3));
  return seq;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_res(const ModelSpec& s) {
  const int n = s.n;
  const bool bn = s.batch_norm;
  auto seq = std::make_unique<Sequential<T>>();
  seq->add(std::make_unique<ResidualBlock<T>>("backbone.res1.0", n, n, false, bn));
  seq->add(std::make_unique<ResidualBlock<T>>("backbone.res1.1", n, n, false, bn));
  int c = n;
  for (int stage = 2; stage <= 4; ++stage) {
    const std::string base = "backbone.res" + std::to_string(stage);
    seq->add(std::make_unique<ResidualBlock<T>>(base + "_scale", c, 2 * c, true, bn));
    seq->add(std::make_unique<ResidualBlock<T>>(base, 2 * c, 2 * c, false, bn));
    c *= 2;
  }
  // Blocks are pre-activation, so the last sum still needs its ReLU.
  seq->add(std::make_unique<Activation<T>>(ActivationKind::kRelu));
  if (s.use_pi || s.res_pool_without_pi) seq->add(std::make_unique<AdaptiveMaxPool2d<T>>(3, 3));
  return seq;
}

template <typename T>
std::unique_ptr<Sequential<T>> build_head(const ModelSpec& s, Shape3 features) {
  const int p = static_cast<int>(s.output_size());
  auto seq = std::make_unique<Sequential<T>>();
  seq->add(std::make_unique<Flatten<T>>());
  seq->add(std::make_unique<Linear<T>>("head.fc1", features.c * features.h * features.w, p));
  seq->add(std::make_unique<Activation<T>>(s.final_activation));
  seq->add(std::make_unique<Linear<T>>("head.fc2", p, p));
  seq->add(std::make_unique<Activation<T>>(s.final_activation));
  return seq;
}

NamedArray to_named(const std::string& name, const std::vector<int>& shape,
                    std::span<const float> values) {
  NamedArray a;
  a.name = name;
  a.shape = shape;
  a.values.assign(values.begin(), values.end());
  return a;
}

}  // namespace

template <typename T>
std::unique_ptr<Sequential<T>> build_side_chain(int n, bool batch_norm, const std::string& prefix) {
  if (n < 1) throw Error(ErrorKind::kInvalidSpec, "side chain needs n >= 1");
  auto seq = std::make_unique<Sequential<T>>();
  add_conv(*seq, prefix + ".conv1.0", n, 2 * n, batch_norm);
  add_conv(*seq, prefix + ".conv1.1", 2 * n, 2 * n, batch_norm);
  seq->add(std::make_unique<MaxPool2d<T>>());
  add_conv(*seq, prefix + ".conv2.0", 2 * n, 4 * n, batch_norm);
  add_conv(*seq, prefix + ".conv2.1", 4 * n, 4 * n, batch_norm);
  seq->add(std::make_unique<MaxPool2d<T>>());
  add_conv(*seq, prefix + ".conv3.0", 4 * n, 8 * n, batch_norm);
  add_conv(*seq, prefix + ".conv3.1", 8 * n, 8 * n, batch_norm);
  seq->add(std::make_unique<AdaptiveMaxPool2d<T>>(3, 3));
  return seq;
}

template std::unique_ptr<Sequential<float>> build_side_chain<float>(int, bool, const std::string&);
template std::unique_ptr<Sequential<double>> build_side_chain<double>(int, bool, const std::string&);

// ------------------------------------------------------------------ Model

template <typename T>
Model<T>::Model(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  lift_ = build_lift<T>(spec_);
  backbone_ = spec_.backbone == Backbone::kVgg ? build_vgg<T>(spec_) : build_res<T>(spec_);
  const Shape3 in{spec_.n, spec_.numz, spec_.numr};
  const Shape3 feat = backbone_->output_shape(lift_->output_shape({spec_.n, 1, 1}));
  if (spec_.use_pi) {
    side_ = build_side_chain<T>(spec_.n, spec_.batch_norm);
    const Shape3 pf = side_->output_shape(in);
    if (pf != feat) throw Error(ErrorKind::kInvalidSpec, "side chain and backbone shapes differ");
  }
  head_ = build_head<T>(spec_, feat);
  head_->output_shape(feat);
  for (Param<T>* p : parameters()) param_count_ += p->count();
}

template <typename T>
std::vector<Param<T>*> Model<T>::parameters() {
  std::vector<Param<T>*> out;
  lift_->collect_params(out);
  backbone_->collect_params(out);
  if (side_) side_->collect_params(out);
  head_->collect_params(out);
  return out;
}

template <typename T>
std::vector<Param<T>*> Model<T>::buffers() {
  std::vector<Param<T>*> out;
  lift_->collect_buffers(out);
  backbone_->collect_buffers(out);
  if (side_) side_->collect_buffers(out);
  head_->collect_buffers(out);
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  return param_count_;
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed, InitMode mode) {
  std::mt19937_64 rng(seed);
  for (Param<T>* p : parameters()) {
    p->allocate();
    if (mode == InitMode::kZero) continue;
    switch (p->init) {
      case ParamInit::kZero:
        break;
      case ParamInit::kOne:
        std::fill(p->value.begin(), p->value.end(), T(1));
        break;
      case ParamInit::kKaiming: {
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / p->fan_in));
        for (T& v : p->value) v = static_cast<T>(dist(rng));
        break;
      }
    }
  }
  for (Param<T>* b : buffers()) {
    b->allocate();
    if (b->init == ParamInit::kOne) std::fill(b->value.begin(), b->value.end(), T(1));
  }
  allocated_ = true;
}

template <typename T>
std::vector<T> Model<T>::forward(std::span<const T> x, int batch, std::span<const T> pi,
                                 bool training) {
  if (!allocated_) throw Error(ErrorKind::kInvalidSpec, "model weights are not initialized");
  const int n = spec_.n;
  if (batch < 1 || x.size() != static_cast<std::size_t>(batch) * n) {
    throw Error(ErrorKind::kShapeMismatch, "expected " + std::to_string(batch) + " x " +
                                               std::to_string(n) + " inputs, got " +
                                               std::to_string(x.size()));
  }
  if (spec_.use_pi && pi.empty()) throw Error(ErrorKind::kMissingPI, spec_.name() + " needs PI input");
  if (!spec_.use_pi && !pi.empty()) {
    throw Error(ErrorKind::kUnexpectedPI, spec_.name() + " has no PI branch");
  }

  FeatureMap<T> in(n, batch, 1, 1);
  for (int b = 0; b < batch; ++b) {
    for (int c = 0; c < n; ++c) in.v[static_cast<std::size_t>(c) * batch + b] = x[static_cast<std::size_t>(b) * n + c];
  }
  FeatureMap<T> features = backbone_->forward(lift_->forward(in, training), training);
  if (spec_.use_pi) {
    if (pi.size() != static_cast<std::size_t>(n) * spec_.numz * spec_.numr) {
      throw Error(ErrorKind::kShapeMismatch, "PI input must have n * numz * numr values");
    }
    FeatureMap<T> pin(n, 1, spec_.numz, spec_.numr);
    std::copy(pi.begin(), pi.end(), pin.v.begin());
    FeatureMap<T> pf = side_->forward(pin, training);
    FeatureMap<T> fused = fuse(features, pf);
    if (training) {
      backbone_out_ = std::move(features);
      pi_out_ = std::move(pf);
    }
    features = std::move(fused);
  }
  const FeatureMap<T> y = head_->forward(features, training);
  if (training) batch_ = batch;

  const std::size_t p = spec_.output_size();
  std::vector<T> out(static_cast<std::size_t>(batch) * p);
  for (std::size_t i = 0; i < p; ++i) {
    for (int b = 0; b < batch; ++b) out[b * p + i] = y.v[i * batch + b];
  }
  return out;
}

template <typename T>
void Model<T>::backward(std::span<const T> grad_out) {
  const std::size_t p = spec_.output_size();
  if (batch_ < 1 || grad_out.size() != static_cast<std::size_t>(batch_) * p) {
    throw Error(ErrorKind::kShapeMismatch, "backward needs a gradient matching the last training forward");
  }
  FeatureMap<T> g(static_cast<int>(p), batch_, 1, 1);
  for (std::size_t i = 0; i < p; ++i) {
    for (int b = 0; b < batch_; ++b) g.v[i * batch_ + b] = grad_out[b * p + i];
  }
  FeatureMap<T> gf = head_->backward(g);
  if (spec_.use_pi) {
    FuseGrad<T> fg = fuse_backward(gf, backbone_out_, pi_out_);
    side_->backward(fg.d_pi);
    gf = std::move(fg.d_backbone);
  }
  lift_->backward(backbone_->backward(gf));
}

template <typename T>
void Model<T>::zero_grad() {
  for (Param<T>* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

template <typename T>
Weights Model<T>::export_weights() const {
  auto* self = const_cast<Model<T>*>(this);
  Weights w;
  w.spec_hash = spec_hash(spec_);
  for (Param<T>* p : self->parameters()) {
    std::vector<float> v(p->value.begin(), p->value.end());
    w.params.push_back(to_named(p->name, p->shape, v));
  }
  for (Param<T>* b : self->buffers()) {
    std::vector<float> v(b->value.begin(), b->value.end());
    w.buffers.push_back(to_named(b->name, b->shape, v));
  }
  return w;
}

template <typename T>
void Model<T>::import_weights(const Weights& w) {
  if (w.spec_hash != spec_hash(spec_)) {
    throw Error(ErrorKind::kSpecMismatch, "weights were produced for a different model spec");
  }
  auto load = [](std::vector<Param<T>*> targets, const std::vector<NamedArray>& arrays,
                 const char* what) {
    if (targets.size() != arrays.size()) {
      throw Error(ErrorKind::kFormatError, std::string(what) + " count mismatch");
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      Param<T>& p = *targets[i];
      const NamedArray& a = arrays[i];
      if (a.name != p.name || a.shape != p.shape || a.values.size() != p.count()) {
        throw Error(ErrorKind::kFormatError, "array '" + a.name + "' does not match '" + p.name + "'");
      }
      p.value.assign(a.values.begin(), a.values.end());
      p.grad.assign(p.count(), T(0));
    }
  };
  load(parameters(), w.params, "parameter");
  load(buffers(), w.buffers, "buffer");
  allocated_ = true;
}

template <typename T>
Shape3 Model<T>::backbone_output_shape() const {
  return backbone_->output_shape(lift_->output_shape({spec_.n, 1, 1}));
}

template <typename T>
Shape3 Model<T>::side_output_shape() const {
  if (!side_) throw Error(ErrorKind::kUnexpectedPI, spec_.name() + " has no PI branch");
  return side_->output_shape({spec_.n, spec_.numz, spec_.numr});
}

template class Model<float>;
template class Model<double>;

std::size_t Weights::scalar_count() const {
  std::size_t n = 0;
  for (const auto& a : params) n += a.values.size();
  return n;
}

// ----------------------------------------------------------- param counts

std::vector<ParamEntry> parameter_table(const ModelSpec& spec) {
  Model<float> m(spec);
  std::vector<ParamEntry> out;
  for (Param<float>* p : m.parameters()) out.push_back({p->name, p->shape, p->count()});
  return out;
}

std::vector<LayerCount> layer_count_table(const ModelSpec& spec) {
  std::vector<LayerCount> out;
  for (const ParamEntry& e : parameter_table(spec)) {
    const std::string layer = e.name.substr(0, e.name.rfind('.'));
    if (out.empty() || out.back().layer != layer) out.push_back({layer, 0});
    out.back().count += e.count;
  }
  return out;
}

std::size_t parameter_count(const ModelSpec& spec) {
  return Model<float>(spec).parameter_count();
}

std::vector<float> pi_input(const ContributionMatrix& cmatrix) {
  const auto w = cmatrix.weights();
  double peak = 0.0;
  for (double v : w) peak = std::max(peak, v);
  std::vector<float> out(w.size());
  const double scale = peak > 0.0 ? 1.0 / peak : 1.0;
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = static_cast<float>(w[i] * scale);
  return out;
}

// ------------------------------------------------------------ checkpoints

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                     const json& extra) {
  if (!model.allocated()) throw Error(ErrorKind::kInvalidSpec, "cannot save an uninitialized model");
  const Weights w = model.export_weights();
  Archive a;
  a.meta = json{{"kind", "checkpoint"},
                {"spec", model.spec()},
                {"spec_hash", w.spec_hash},
                {"param_arrays", w.params.size()},
                {"extra", extra}};
  a.arrays = w.params;
  a.arrays.insert(a.arrays.end(), w.buffers.begin(), w.buffers.end());
  write_archive(path, a);
}

namespace {

ModelSpec checkpoint_spec(const json& meta, const std::filesystem::path& path) {
  if (meta.value("kind", std::string()) != "checkpoint" || !meta.contains("spec")) {
    throw Error(ErrorKind::kFormatError, path.string() + ": not a model checkpoint");
  }
  ModelSpec spec;
  try {
    spec = meta.at("spec").get<ModelSpec>();
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormatError, path.string() + ": bad spec: " + e.what());
  }
  if (meta.value("spec_hash", std::string()) != spec_hash(spec)) {
    throw Error(ErrorKind::kFormatError, path.string() + ": spec hash does not match stored spec");
  }
  return spec;
}

Model<float> materialize(Archive a, const ModelSpec& spec, const std::filesystem::path& path) {
  std::size_t np = 0;
  try {
    np = a.meta.at("param_arrays").get<std::size_t>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::kFormatError, path.string() + ": missing param_arrays");
  }
  if (np > a.arrays.size()) throw Error(ErrorKind::kFormatError, path.string() + ": bad param_arrays");
  Weights w;
  w.spec_hash = spec_hash(spec);
  w.params.assign(std::make_move_iterator(a.arrays.begin()),
                  std::make_move_iterator(a.arrays.begin() + static_cast<std::ptrdiff_t>(np)));
  w.buffers.assign(std::make_move_iterator(a.arrays.begin() + static_cast<std::ptrdiff_t>(np)),
                   std::make_move_iterator(a.arrays.end()));
  Model<float> m(spec);
  m.import_weights(w);
  return m;
}

}  // namespace

Model<float> load_checkpoint(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  const ModelSpec spec = checkpoint_spec(a.meta, path);
  return materialize(std::move(a), spec, path);
}

Model<float> load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Archive a = read_archive(path);
  const ModelSpec spec = checkpoint_spec(a.meta, path);
  if (!(spec == expected)) {
    throw Error(ErrorKind::kSpecMismatch, path.string() + " holds " + json(spec).dump() +
                                              ", expected " + json(expected).dump());
  }
  return materialize(std::move(a), spec, path);
}

json read_checkpoint_meta(const std::filesystem::path& path) {
  Archive a = read_archive(path);
  checkpoint_spec(a.meta, path);
  return a.meta;
}

// ------------------------------------------------------------ fusion probe

namespace {

double neuron(FusionMode mode, std::span<const double> w, std::span<const double> x,
              std::span<const double> xp, double b) {
  const std::size_t d = x.size();
  double s = b;
  for (std::size_t i = 0; i < d; ++i) {
    switch (mode) {
      case FusionMode::kAdd: s += w[i] * (x[i] + xp[i]); break;
      case FusionMode::kConcat: s += w[i] * x[i] + w[d + i] * xp[i]; break;
      case FusionMode::kMultiply: s += w[i] * (x[i] * xp[i]); break;
    }
  }
  return s;
}

double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace

FusionProbeReport fusion_gradient_probe(FusionMode mode, std::span<const double> x,
                                        std::span<const double> x_pi,
                                        std::span<const double> weights, double bias, double h) {
  const std::size_t d = x.size();
  if (d == 0 || x_pi.size() != d) {
    throw Error(ErrorKind::kShapeMismatch, "fusion probe needs equal, non-empty x and x'");
  }
  const std::size_t nw = mode == FusionMode::kConcat ? 2 * d : d;
  std::vector<double> w(nw, 1.0);
  if (!weights.empty()) {
    if (weights.size() != nw) throw Error(ErrorKind::kShapeMismatch, "fusion probe weight count");
    w.assign(weights.begin(), weights.end());
  }

  FusionProbeReport r;
  r.mode = mode;
  r.output = neuron(mode, w, x, x_pi, bias);
  r.weight_grad.resize(nw);
  r.input_grad.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    switch (mode) {
      case FusionMode::kAdd:
        r.weight_grad[i] = x[i] + x_pi[i];
        r.input_grad[i] = w[i];
        break;
      case FusionMode::kConcat:
        r.weight_grad[i] = x[i];
        r.weight_grad[d + i] = x_pi[i];
        r.input_grad[i] = w[i];
        break;
      case FusionMode::kMultiply:
        r.weight_grad[i] = x[i] * x_pi[i];
        r.input_grad[i] = w[i] * x_pi[i];
        break;
    }
  }

  std::vector<double> wt = w;
  for (std::size_t i = 0; i < nw; ++i) {
    wt[i] = w[i] + h;
    const double up = neuron(mode, wt, x, x_pi, bias);
    wt[i] = w[i] - h;
    const double dn = neuron(mode, wt, x, x_pi, bias);
    wt[i] = w[i];
    r.weight_grad_fd.push_back((up - dn) / (2 * h));
  }
  std::vector<double> xt(x.begin(), x.end());
  for (std::size_t i = 0; i < d; ++i) {
    xt[i] = x[i] + h;
    const double up = neuron(mode, w, xt, x_pi, bias);
    xt[i] = x[i] - h;
    const double dn = neuron(mode, w, xt, x_pi, bias);
    xt[i] = x[i];
    r.input_grad_fd.push_back((up - dn) / (2 * h));
  }
  for (std::size_t i = 0; i < nw; ++i) {
    r.max_rel_error = std::max(r.max_rel_error, rel_err(r.weight_grad[i], r.weight_grad_fd[i]));
  }
  for (std::size_t i = 0; i < d; ++i) {
    r.max_rel_error = std::max(r.max_rel_error, rel_err(r.input_grad[i], r.input_grad_fd[i]));
  }
  return r;
}

}  // namespace lintomo
