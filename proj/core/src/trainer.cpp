#include "lintomo/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "lintomo/archive.hpp"
#include "lintomo/error.hpp"
#include "lintomo/numeric.hpp"

namespace lintomo {

using nlohmann::json;

// ----------------------------------------------------------------- config

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::kInvalidConfig, msg); };
  if (!(lr0 > 0.0) || !(lr_min >= 0.0) || !(lr_min < lr0)) fail("need 0 <= lr_min < lr0");
  if (period < 1) fail("period must be >= 1");
  if (max_epochs < 1) fail("max_epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (patience < 1 || patience > max_epochs) fail("need 1 <= patience <= max_epochs");
  if (max_steps < 0) fail("max_steps must be >= 0");
  loss_config().validate();
}

LossConfig TrainConfig::loss_config() const {
  LossConfig l;
  l.c1 = loss_mode == LossMode::kPilf ? c1 : 0.0;
  l.lambda = lambda;
  l.detach_weight = detach_weight;
  return l;
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"lr0", c.lr0},
           {"lr_min", c.lr_min},
           {"period", c.period},
           {"max_epochs", c.max_epochs},
           {"batch_size", c.batch_size},
           {"patience", c.patience},
           {"lambda", c.lambda},
           {"c1", c.c1},
           {"seed", c.seed},
           {"loss_mode", c.loss_mode == LossMode::kPilf ? "pilf" : "loss1_only"},
           {"detach_weight", c.detach_weight},
           {"max_steps", c.max_steps}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw Error(ErrorKind::kInvalidConfig, "train config must be an object");
  TrainConfig out;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr0") out.lr0 = value.get<double>();
      else if (key == "lr_min") out.lr_min = value.get<double>();
      else if (key == "period") out.period = value.get<int>();
      else if (key == "max_epochs") out.max_epochs = value.get<int>();
      else if (key == "batch_size") out.batch_size = value.get<int>();
      else if (key == "patience") out.patience = value.get<int>();
      else if (key == "lambda") out.lambda = value.get<double>();
      else if (key == "c1") out.c1 = value.get<double>();
      else if (key == "seed") out.seed = value.get<std::uint64_t>();
      else if (key == "detach_weight") out.detach_weight = value.get<bool>();
      else if (key == "max_steps") out.max_steps = value.get<std::int64_t>();
      else if (key == "loss_mode") {
        const auto mode = value.get<std::string>();
        if (mode == "loss1_only") out.loss_mode = LossMode::kLoss1Only;
        else if (mode == "pilf") out.loss_mode = LossMode::kPilf;
        else throw Error(ErrorKind::kInvalidConfig, "loss_mode must be 'loss1_only' or 'pilf', got '" + mode + "'");
      } else {
        throw Error(ErrorKind::kInvalidConfig, "unknown train field '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kInvalidConfig, std::string("train config: ") + e.what());
  }
  out.validate();
  c = out;
}

double cosine_lr(int epoch, const TrainConfig& cfg) {
  const double t = static_cast<double>(std::min(std::max(epoch, 0), cfg.period)) / cfg.period;
  return cfg.lr_min + 0.5 * (cfg.lr0 - cfg.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

// ---------------------------------------------------------------- history

void to_json(json& j, const EpochRecord& r) {
  j = json{{"epoch", r.epoch},         {"lr", r.lr},          {"train_loss", r.train_loss},
           {"valid_loss", r.valid_loss}, {"w2", r.w2},          {"E1_valid", r.E1_valid},
           {"E2_valid", r.E2_valid}};
}

void from_json(const json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.train_loss = j.at("train_loss").get<double>();
  r.valid_loss = j.at("valid_loss").get<double>();
  r.w2 = j.at("w2").get<double>();
  r.E1_valid = j.at("E1_valid").get<double>();
  r.E2_valid = j.at("E2_valid").get<double>();
}

void to_json(json& j, const TrainHistory& h) {
  j = json{{"epochs", h.epochs},
           {"best_epoch", h.best_epoch},
           {"best_valid_loss", h.best_valid_loss},
           {"stop_reason", h.stop_reason},
           {"steps", h.steps}};
}

void from_json(const json& j, TrainHistory& h) {
  h.epochs = j.at("epochs").get<std::vector<EpochRecord>>();
  h.best_epoch = j.at("best_epoch").get<int>();
  h.best_valid_loss = j.at("best_valid_loss").get<double>();
  h.stop_reason = j.at("stop_reason").get<std::string>();
  h.steps = j.at("steps").get<std::int64_t>();
}

// ------------------------------------------------------------ train state

namespace {

void append_prefixed(std::vector<NamedArray>& out, const std::vector<NamedArray>& in,
                     const std::string& prefix) {
  for (NamedArray a : in) {
    a.name = prefix + a.name;
    out.push_back(std::move(a));
  }
}

std::vector<NamedArray> take_prefixed(const Archive& a, const std::string& prefix) {
  std::vector<NamedArray> out;
  for (const NamedArray& x : a.arrays) {
    if (x.name.rfind(prefix, 0) == 0) {
      NamedArray y = x;
      y.name = x.name.substr(prefix.size());
      out.push_back(std::move(y));
    }
  }
  return out;
}

}  // namespace

void save_train_state(const std::filesystem::path& path, const TrainState& s,
                      const ModelSpec& spec, const TrainConfig& cfg) {
  Archive a;
  a.meta = json{{"kind", "train_state"},
                {"spec", spec},
                {"spec_hash", spec_hash(spec)},
                {"config", cfg},
                {"next_epoch", s.next_epoch},
                {"stale_epochs", s.stale_epochs},
                {"history", s.history}};
  append_prefixed(a.arrays, s.current.params, "current.param/");
  append_prefixed(a.arrays, s.current.buffers, "current.buffer/");
  append_prefixed(a.arrays, s.best.params, "best.param/");
  append_prefixed(a.arrays, s.best.buffers, "best.buffer/");
  append_prefixed(a.arrays, s.adam_m, "adam.m/");
  append_prefixed(a.arrays, s.adam_v, "adam.v/");
  write_archive(path, a);
}

TrainState load_train_state(const std::filesystem::path& path, const ModelSpec& spec) {
  const Archive a = read_archive(path);
  if (a.meta.value("kind", std::string()) != "train_state") {
    throw Error(ErrorKind::kFormatError, path.string() + ": not a training state");
  }
  if (a.meta.value("spec_hash", std::string()) != spec_hash(spec)) {
    throw Error(ErrorKind::kSpecMismatch, path.string() + ": state belongs to another model spec");
  }
  TrainState s;
  try {
    s.next_epoch = a.meta.at("next_epoch").get<int>();
    s.stale_epochs = a.meta.at("stale_epochs").get<int>();
    s.history = a.meta.at("history").get<TrainHistory>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kFormatError, path.string() + ": " + e.what());
  }
  const std::string hash = spec_hash(spec);
  s.current = Weights{hash, take_prefixed(a, "current.param/"), take_prefixed(a, "current.buffer/")};
  s.best = Weights{hash, take_prefixed(a, "best.param/"), take_prefixed(a, "best.buffer/")};
  s.adam_m = take_prefixed(a, "adam.m/");
  s.adam_v = take_prefixed(a, "adam.v/");
  return s;
}

// ---------------------------------------------------------------- helpers

namespace {

void check_dims(const Model<float>& model, const Dataset& d, const ContributionMatrix& c,
                const char* what) {
  const ModelSpec& s = model.spec();
  if (d.n() != s.n || d.numz() != s.numz || d.numr() != s.numr) {
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + " dims (" + std::to_string(d.n()) +
                                               ", " + std::to_string(d.numz()) + ", " +
                                               std::to_string(d.numr()) + ") do not match " +
                                               s.name() + " spec");
  }
  if (c.n() != s.n || c.numz() != s.numz || c.numr() != s.numr) {
    throw Error(ErrorKind::kShapeMismatch, "contribution matrix dims do not match model spec");
  }
}

std::vector<float> pi_for(const Model<float>& model, const ContributionMatrix& c) {
  return model.spec().use_pi ? pi_input(c) : std::vector<float>{};
}

class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(std::vector<Param<float>*> params) : params_(std::move(params)) {
    for (const Param<float>* p : params_) {
      m_.emplace_back(p->count(), 0.0f);
      v_.emplace_back(p->count(), 0.0f);
    }
  }

  void step(double lr, std::int64_t t) {
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    const float b1 = static_cast<float>(kBeta1), b2 = static_cast<float>(kBeta2);
    const float step_size = static_cast<float>(lr / c1);
    const float inv_c2 = static_cast<float>(1.0 / c2);
    const float eps = static_cast<float>(kEps);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<float>& p = *params_[k];
      float* m = m_[k].data();
      float* v = v_[k].data();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float g = p.grad[i];
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        p.value[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      }
    }
  }

  std::vector<NamedArray> export_moments(bool second) const {
    std::vector<NamedArray> out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      out.push_back({params_[k]->name, params_[k]->shape, second ? v_[k] : m_[k]});
    }
    return out;
  }

  void import_moments(const std::vector<NamedArray>& m, const std::vector<NamedArray>& v) {
    if (m.size() != params_.size() || v.size() != params_.size()) {
      throw Error(ErrorKind::kFormatError, "optimizer state does not match the model");
    }
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (m[k].values.size() != m_[k].size() || v[k].values.size() != v_[k].size()) {
        throw Error(ErrorKind::kFormatError, "optimizer state for '" + params_[k]->name + "' is misshapen");
      }
      m_[k] = m[k].values;
      v_[k] = v[k].values;
    }
  }

 private:
  std::vector<Param<float>*> params_;
  std::vector<std::vector<float>> m_, v_;
};

// Epoch-specific shuffle stream derived from the run seed.
std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  return std::mt19937_64(seq);
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : pairwise_sum(v) / static_cast<double>(v.size());
}

}  // namespace

std::vector<float> predict(Model<float>& model, const Dataset& data,
                           const ContributionMatrix& cmatrix, int batch_size) {
  const std::vector<float> pi = pi_for(model, cmatrix);
  const std::size_t n = static_cast<std::size_t>(data.n());
  const std::size_t p = data.label_size();
  std::vector<float> out(data.m() * p);
  const std::size_t bs = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < data.m(); start += bs) {
    const std::size_t b = std::min(bs, data.m() - start);
    const auto x = data.inputs().subspan(start * n, b * n);
    const std::vector<float> y = model.forward(x, static_cast<int>(b), pi, false);
    std::copy(y.begin(), y.end(), out.begin() + static_cast<std::ptrdiff_t>(start * p));
  }
  return out;
}

double validation_loss(Model<float>& model, const Dataset& data,
                       const ContributionMatrix& cmatrix, const TrainConfig& cfg) {
  check_dims(model, data, cmatrix, "validation set");
  const std::vector<float> preds = predict(model, data, cmatrix, cfg.batch_size);
  const auto params = model.parameters();
  const double sq = cfg.lambda > 0.0 ? sum_of_squares<float>(params) : 0.0;
  const PilfResult r = pilf<float>(preds, data.labels(), data.inputs(), cmatrix,
                                   static_cast<int>(data.m()), sq, cfg.loss_config());
  return r.total;
}

TrainHistory train(Model<float>& model, const Dataset& train_set, const Dataset& valid_set,
                   const ContributionMatrix& cmatrix, const TrainConfig& cfg,
                   const TrainHooks& hooks, const TrainState* resume) {
  cfg.validate();
  check_dims(model, train_set, cmatrix, "training set");
  check_dims(model, valid_set, cmatrix, "validation set");
  if (train_set.m() == 0 || valid_set.m() == 0) {
    throw Error(ErrorKind::kShapeMismatch, "training and validation sets must be non-empty");
  }
  if (!model.allocated()) model.initialize(cfg.seed);

  const LossConfig loss_cfg = cfg.loss_config();
  const std::vector<float> pi = pi_for(model, cmatrix);
  const auto params = model.parameters();
  Adam adam(params);

  TrainHistory history;
  Weights best = model.export_weights();
  int start_epoch = 0;
  int stale = 0;
  if (resume) {
    model.import_weights(resume->current);
    adam.import_moments(resume->adam_m, resume->adam_v);
    history = resume->history;
    history.stop_reason.clear();
    best = resume->best;
    start_epoch = resume->next_epoch;
    stale = resume->stale_epochs;
  }

  const std::size_t n = static_cast<std::size_t>(train_set.n());
  const std::size_t p = train_set.label_size();
  const std::size_t m = train_set.m();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<float> xb, yb, grad;
  std::vector<std::size_t> order(m);
  bool step_cap_hit = cfg.max_steps > 0 && history.steps >= cfg.max_steps;

  int epoch = start_epoch;
  for (; epoch < cfg.max_epochs && !step_cap_hit; ++epoch) {
    const double lr = cosine_lr(epoch, cfg);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = epoch_rng(cfg.seed, epoch);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> step_losses, step_w2;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < m; start += bs, ++batch_index) {
      const std::size_t b = std::min(bs, m - start);
      xb.resize(b * n);
      yb.resize(b * p);
      for (std::size_t k = 0; k < b; ++k) {
        const auto xi = train_set.input(order[start + k]);
        const auto yi = train_set.label(order[start + k]);
        std::copy(xi.begin(), xi.end(), xb.begin() + static_cast<std::ptrdiff_t>(k * n));
        std::copy(yi.begin(), yi.end(), yb.begin() + static_cast<std::ptrdiff_t>(k * p));
      }
      model.zero_grad();
      const std::vector<float> pred = model.forward(xb, static_cast<int>(b), pi, true);
      const double sq = cfg.lambda > 0.0 ? sum_of_squares<float>(params) : 0.0;
      const PilfResult r = pilf<float>(pred, yb, xb, cmatrix, static_cast<int>(b), sq, loss_cfg);
      if (!std::isfinite(r.total)) {
        throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch) + " batch " +
                                                   std::to_string(batch_index) + ": loss is " +
                                                   std::to_string(r.total));
      }
      grad.assign(r.grad_pred.begin(), r.grad_pred.end());
      model.backward(grad);
      add_l2_grad<float>(params, cfg.lambda);
      ++history.steps;
      adam.step(lr, history.steps);

      step_losses.push_back(r.total);
      step_w2.push_back(r.w2);
      if (hooks.on_step) {
        hooks.on_step(StepRecord{epoch, history.steps, r.loss1, r.loss2, r.w2, r.total, r.degenerate});
      }
      if (cfg.max_steps > 0 && history.steps >= cfg.max_steps) {
        step_cap_hit = true;
        break;
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = mean_of(step_losses);
    rec.w2 = mean_of(step_w2);
    const std::vector<float> vpred = predict(model, valid_set, cmatrix, cfg.batch_size);
    const int vm = static_cast<int>(valid_set.m());
    const double vsq = cfg.lambda > 0.0 ? sum_of_squares<float>(params) : 0.0;
    rec.valid_loss = pilf<float>(vpred, valid_set.labels(), valid_set.inputs(), cmatrix, vm, vsq,
                                 loss_cfg).total;
    if (hooks.valid_loss_override) rec.valid_loss = hooks.valid_loss_override(epoch, rec.valid_loss);
    rec.E1_valid = metric_E1<float>(vpred, valid_set.labels(), vm).value;
    rec.E2_valid = metric_E2<float>(vpred, valid_set.inputs(), cmatrix, vm).value;
    if (!std::isfinite(rec.valid_loss)) {
      throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ": validation loss is " +
                                                 std::to_string(rec.valid_loss));
    }

    if (history.best_epoch < 0 || rec.valid_loss < history.best_valid_loss) {
      history.best_epoch = epoch;
      history.best_valid_loss = rec.valid_loss;
      best = model.export_weights();
      stale = 0;
    } else {
      ++stale;
    }
    history.epochs.push_back(rec);

    const bool early = stale >= cfg.patience;
    if (early) history.stop_reason = "early_stop";
    else if (step_cap_hit) history.stop_reason = "max_steps";
    else if (epoch + 1 >= cfg.max_epochs) history.stop_reason = "max_epochs";

    if (hooks.on_epoch_end) {
      TrainState s;
      s.next_epoch = epoch + 1;
      s.stale_epochs = stale;
      s.history = history;
      s.current = model.export_weights();
      s.best = best;
      s.adam_m = adam.export_moments(false);
      s.adam_v = adam.export_moments(true);
      hooks.on_epoch_end(s);
    }
    if (early) break;
  }
  if (history.stop_reason.empty()) history.stop_reason = step_cap_hit ? "max_steps" : "max_epochs";
  model.import_weights(best);
  return history;
}

// ------------------------------------------------------------- evaluation

EvalReport evaluate_predictions(std::span<const float> preds, const Dataset& test_set,
                                const ContributionMatrix& cmatrix, std::size_t samples,
                                const std::string& dataset_name, const std::string& model_name) {
  const int m = static_cast<int>(test_set.m());
  if (preds.size() != test_set.labels().size()) {
    throw Error(ErrorKind::kShapeMismatch, "prediction count does not match the test set");
  }
  const std::size_t keep = std::min<std::size_t>(samples, test_set.m());
  const MetricResult e1 = metric_E1<float>(preds, test_set.labels(), m, keep);
  const MetricResult e2 = metric_E2<float>(preds, test_set.inputs(), cmatrix, m, keep);
  EvalReport r;
  r.dataset = dataset_name;
  r.model = model_name;
  r.E1 = e1.value;
  r.E2 = e2.value;
  r.eps1_per_sample = e1.per_sample;
  r.eps2_per_sample = e2.per_sample;
  r.eps1_maps = e1.maps;
  r.eps2_vectors = e2.maps;
  const std::size_t p = test_set.label_size();
  for (std::size_t j = 0; j < keep; ++j) {
    std::vector<double> field(preds.begin() + static_cast<std::ptrdiff_t>(j * p),
                              preds.begin() + static_cast<std::ptrdiff_t>((j + 1) * p));
    r.back_projections.push_back(forward_project(cmatrix, field));
  }
  return r;
}

EvalReport evaluate(Model<float>& model, const Dataset& test_set,
                    const ContributionMatrix& cmatrix, std::size_t samples,
                    const std::string& dataset_name) {
  check_dims(model, test_set, cmatrix, "test set");
  const std::vector<float> preds = predict(model, test_set, cmatrix);
  return evaluate_predictions(preds, test_set, cmatrix, samples, dataset_name, model.spec().name());
}

json report_to_json(const EvalReport& r, bool per_sample) {
  json j{{"dataset", r.dataset}, {"model", r.model}, {"E1", r.E1}, {"E2", r.E2}};
  if (per_sample) {
    j["per_sample"] = json{{"eps1_mean", r.eps1_per_sample}, {"eps2_mean", r.eps2_per_sample}};
    json dumps = json::array();
    for (std::size_t k = 0; k < r.eps1_maps.size(); ++k) {
      dumps.push_back(json{{"index", k},
                           {"eps1_map", r.eps1_maps[k]},
                           {"eps2", r.eps2_vectors[k]},
                           {"back_projection", r.back_projections[k]}});
    }
    j["samples"] = dumps;
  }
  return j;
}

std::string reports_to_csv(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << "dataset,model,E1,E2\n";
  char buf[64];
  for (const EvalReport& r : reports) {
    os << r.dataset << ',' << r.model << ',';
    std::snprintf(buf, sizeof buf, "%.6e", r.E1);
    os << buf << ',';
    std::snprintf(buf, sizeof buf, "%.6e", r.E2);
    os << buf << '\n';
  }
  return os.str();
}

}  // namespace lintomo
