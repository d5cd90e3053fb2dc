#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "lintomo/geometry.hpp"
#include "lintomo/layers.hpp"

namespace lintomo {

// Arrays are sample-major: pred/label (batch, numz*numr), x (batch, n).
// All reductions run in double with pairwise summation.

struct LossConfig {
  double c1 = 0.0;
  double lambda = 1e-4;
  // When false, w2 is differentiated as a function of loss1 and loss2.
  bool detach_weight = true;

  void validate() const;  // InvalidConfig
};

// Mean over batch and pixels of (pred - label)^2.
template <typename T>
double loss1(std::span<const T> pred, std::span<const T> label, int batch);
template <typename T>
std::vector<double> loss1_grad(std::span<const T> pred, std::span<const T> label, int batch);

// Mean over batch and chords of (C . pred - x)^2.
template <typename T>
double loss2(std::span<const T> pred, std::span<const T> x, const ContributionMatrix& cmatrix,
             int batch);
// 2 / (batch n) * C^T (C . pred - x), per sample.
template <typename T>
std::vector<double> loss2_grad(std::span<const T> pred, std::span<const T> x,
                               const ContributionMatrix& cmatrix, int batch);

// Sum of squares over every parameter tensor.
template <typename T>
double sum_of_squares(std::span<Param<T>* const> params);
// grad += 2 lambda p
template <typename T>
void add_l2_grad(std::span<Param<T>* const> params, double lambda);

struct PilfResult {
  double total = 0.0;     // loss1 + w2 * loss2 + lambda * sum p^2
  double loss1 = 0.0;
  double loss2 = 0.0;
  double w2 = 0.0;
  double l2 = 0.0;        // lambda * sum p^2
  bool degenerate = false;  // loss2 == 0 with c1 > 0; w2 was forced to 0
  std::vector<double> grad_pred;  // d total / d pred
};

// `param_sq` is sum p^2 (see sum_of_squares). Passing an empty cmatrix with
// c1 == 0 skips the back-projection entirely.
template <typename T>
PilfResult pilf(std::span<const T> pred, std::span<const T> label, std::span<const T> x,
                const ContributionMatrix& cmatrix, int batch, double param_sq,
                const LossConfig& cfg);

struct MetricResult {
  double value = 0.0;                     // E1 or E2
  std::vector<double> per_sample;         // mean relative error of each sample
  std::vector<std::vector<double>> maps;  // unreduced errors of the first `keep` samples
};

// E1: mean over samples of mean_i |pred_i - y_i| / max(y). DegenerateSample
// when a label's maximum is zero.
template <typename T>
MetricResult metric_E1(std::span<const T> preds, std::span<const T> labels, int batch,
                       std::size_t keep = 0);

// E2: mean over samples of mean_i |x_i - C^i . pred| / max|x|.
template <typename T>
MetricResult metric_E2(std::span<const T> preds, std::span<const T> inputs,
                       const ContributionMatrix& cmatrix, int batch, std::size_t keep = 0);

}  // namespace lintomo
