#include "lintomo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lintomo/error.hpp"
#include "lintomo/numeric.hpp"

namespace lintomo {

void LossConfig::validate() const {
  if (!(c1 >= 0.0) || !std::isfinite(c1)) throw Error(ErrorKind::kInvalidConfig, "c1 must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::kInvalidConfig, "lambda must be >= 0");
  }
}

namespace {

std::size_t per_sample(std::size_t total, int batch, const char* what) {
  if (batch < 1 || total % static_cast<std::size_t>(batch) != 0 || total == 0) {
    throw Error(ErrorKind::kShapeMismatch,
                std::string(what) + ": " + std::to_string(total) + " values do not split into " +
                    std::to_string(batch) + " samples");
  }
  return total / static_cast<std::size_t>(batch);
}

void check_cmatrix(const ContributionMatrix& c, std::size_t p, std::size_t n, const char* what) {
  if (c.plane_size() != p || static_cast<std::size_t>(c.n()) != n) {
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + ": contribution matrix is " +
                                               std::to_string(c.n()) + " x " +
                                               std::to_string(c.plane_size()) + ", data needs " +
                                               std::to_string(n) + " x " + std::to_string(p));
  }
}

// Back-projection residual C . pred_b - x_b for every sample, flattened (batch, n).
template <typename T>
std::vector<double> residuals(std::span<const T> pred, std::span<const T> x,
                              const ContributionMatrix& c, int batch) {
  const std::size_t p = per_sample(pred.size(), batch, "prediction");
  const std::size_t n = per_sample(x.size(), batch, "measurement");
  check_cmatrix(c, p, n, "back-projection");
  std::vector<double> res(static_cast<std::size_t>(batch) * n);
  std::vector<double> terms(p);
  for (int b = 0; b < batch; ++b) {
    const T* pb = pred.data() + b * p;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = c.row(static_cast<int>(i));
      for (std::size_t k = 0; k < p; ++k) terms[k] = row[k] * static_cast<double>(pb[k]);
      res[b * n + i] = pairwise_sum(terms) - static_cast<double>(x[b * n + i]);
    }
  }
  return res;
}

}  // namespace

template <typename T>
double loss1(std::span<const T> pred, std::span<const T> label, int batch) {
  if (pred.size() != label.size()) throw Error(ErrorKind::kShapeMismatch, "loss1: length mismatch");
  per_sample(pred.size(), batch, "loss1");
  std::vector<double> sq(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(label[i]);
    sq[i] = d * d;
  }
  return pairwise_sum(sq) / static_cast<double>(pred.size());
}

template <typename T>
std::vector<double> loss1_grad(std::span<const T> pred, std::span<const T> label, int batch) {
  if (pred.size() != label.size()) throw Error(ErrorKind::kShapeMismatch, "loss1: length mismatch");
  per_sample(pred.size(), batch, "loss1");
  std::vector<double> g(pred.size());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    g[i] = scale * (static_cast<double>(pred[i]) - static_cast<double>(label[i]));
  }
  return g;
}

template <typename T>
double loss2(std::span<const T> pred, std::span<const T> x, const ContributionMatrix& c, int batch) {
  std::vector<double> r = residuals(pred, x, c, batch);
  for (double& v : r) v *= v;
  return pairwise_sum(r) / static_cast<double>(r.size());
}

template <typename T>
std::vector<double> loss2_grad(std::span<const T> pred, std::span<const T> x,
                               const ContributionMatrix& c, int batch) {
  const std::vector<double> r = residuals(pred, x, c, batch);
  const std::size_t p = c.plane_size();
  const std::size_t n = static_cast<std::size_t>(c.n());
  const double scale = 2.0 / static_cast<double>(r.size());
  std::vector<double> g(pred.size(), 0.0);
  for (int b = 0; b < batch; ++b) {
    double* gb = g.data() + b * p;
    for (std::size_t i = 0; i < n; ++i) {
      const double ri = scale * r[b * n + i];
      if (ri == 0.0) continue;
      const auto row = c.row(static_cast<int>(i));
      for (std::size_t k = 0; k < p; ++k) gb[k] += ri * row[k];
    }
  }
  return g;
}

template <typename T>
double sum_of_squares(std::span<Param<T>* const> params) {
  std::vector<double> parts;
  parts.reserve(params.size());
  std::vector<double> sq;
  for (const Param<T>* p : params) {
    sq.resize(p->value.size());
    for (std::size_t i = 0; i < sq.size(); ++i) {
      const double v = p->value[i];
      sq[i] = v * v;
    }
    parts.push_back(pairwise_sum(sq));
  }
  return pairwise_sum(parts);
}

template <typename T>
void add_l2_grad(std::span<Param<T>* const> params, double lambda) {
  if (lambda == 0.0) return;
  const T k = static_cast<T>(2.0 * lambda);
  for (Param<T>* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += k * p->value[i];
  }
}

template <typename T>
PilfResult pilf(std::span<const T> pred, std::span<const T> label, std::span<const T> x,
                const ContributionMatrix& c, int batch, double param_sq, const LossConfig& cfg) {
  cfg.validate();
  PilfResult r;
  r.loss1 = loss1(pred, label, batch);
  r.l2 = cfg.lambda * param_sq;
  r.grad_pred = loss1_grad(pred, label, batch);

  if (cfg.c1 == 0.0) {
    r.total = r.loss1 + r.l2;
    return r;
  }
  r.loss2 = loss2(pred, x, c, batch);
  if (r.loss2 == 0.0) {
    r.degenerate = true;
    r.total = r.loss1 + r.l2;
    return r;
  }
  r.w2 = cfg.c1 * r.loss1 / r.loss2;
  r.total = r.loss1 + r.w2 * r.loss2 + r.l2;
  if (cfg.detach_weight) {
    const std::vector<double> g2 = loss2_grad(pred, x, c, batch);
    for (std::size_t i = 0; i < g2.size(); ++i) r.grad_pred[i] += r.w2 * g2[i];
  } else {
    // w2 * loss2 == c1 * loss1 identically, so only loss1 carries gradient.
    for (double& g : r.grad_pred) g *= 1.0 + cfg.c1;
  }
  return r;
}

template <typename T>
MetricResult metric_E1(std::span<const T> preds, std::span<const T> labels, int batch,
                       std::size_t keep) {
  if (preds.size() != labels.size()) throw Error(ErrorKind::kShapeMismatch, "E1: length mismatch");
  const std::size_t p = per_sample(preds.size(), batch, "E1");
  MetricResult out;
  std::vector<double> eps(p);
  for (int b = 0; b < batch; ++b) {
    const T* y = labels.data() + b * p;
    const T* q = preds.data() + b * p;
    const double ymax = static_cast<double>(*std::max_element(y, y + p));
    if (!(ymax > 0.0)) {
      throw Error(ErrorKind::kDegenerateSample, "E1: sample " + std::to_string(b) + " has max(label) <= 0");
    }
    for (std::size_t k = 0; k < p; ++k) {
      eps[k] = std::abs(static_cast<double>(q[k]) - static_cast<double>(y[k])) / ymax;
    }
    out.per_sample.push_back(pairwise_sum(eps) / static_cast<double>(p));
    if (static_cast<std::size_t>(b) < keep) out.maps.push_back(eps);
  }
  out.value = pairwise_sum(out.per_sample) / static_cast<double>(batch);
  return out;
}

template <typename T>
MetricResult metric_E2(std::span<const T> preds, std::span<const T> inputs,
                       const ContributionMatrix& c, int batch, std::size_t keep) {
  const std::vector<double> r = residuals(preds, inputs, c, batch);
  const std::size_t n = static_cast<std::size_t>(c.n());
  MetricResult out;
  std::vector<double> eps(n);
  for (int b = 0; b < batch; ++b) {
    double xmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) xmax = std::max(xmax, std::abs(static_cast<double>(inputs[b * n + i])));
    if (!(xmax > 0.0)) {
      throw Error(ErrorKind::kDegenerateSample, "E2: sample " + std::to_string(b) + " has max|x| == 0");
    }
    for (std::size_t i = 0; i < n; ++i) eps[i] = std::abs(r[b * n + i]) / xmax;
    out.per_sample.push_back(pairwise_sum(eps) / static_cast<double>(n));
    if (static_cast<std::size_t>(b) < keep) out.maps.push_back(eps);
  }
  out.value = pairwise_sum(out.per_sample) / static_cast<double>(batch);
  return out;
}

#define LINTOMO_INSTANTIATE_OBJECTIVE(T)                                                       \
  template double loss1<T>(std::span<const T>, std::span<const T>, int);                       \
  template std::vector<double> loss1_grad<T>(std::span<const T>, std::span<const T>, int);     \
  template double loss2<T>(std::span<const T>, std::span<const T>, const ContributionMatrix&,   \
                           int);                                                               \
  template std::vector<double> loss2_grad<T>(std::span<const T>, std::span<const T>,           \
                                             const ContributionMatrix&, int);                  \
  template double sum_of_squares<T>(std::span<Param<T>* const>);                               \
  template void add_l2_grad<T>(std::span<Param<T>* const>, double);                            \
  template PilfResult pilf<T>(std::span<const T>, std::span<const T>, std::span<const T>,      \
                              const ContributionMatrix&, int, double, const LossConfig&);      \
  template MetricResult metric_E1<T>(std::span<const T>, std::span<const T>, int, std::size_t); \
  template MetricResult metric_E2<T>(std::span<const T>, std::span<const T>,                   \
                                     const ContributionMatrix&, int, std::size_t);

LINTOMO_INSTANTIATE_OBJECTIVE(float)
LINTOMO_INSTANTIATE_OBJECTIVE(double)

#undef LINTOMO_INSTANTIATE_OBJECTIVE

}  // namespace lintomo
