#include "lintomo/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "lintomo/error.hpp"

namespace lintomo {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

std::string shape_text(Shape3 s) {
  return "(" + std::to_string(s.c) + ", " + std::to_string(s.h) + ", " + std::to_string(s.w) + ")";
}

template <typename T>
void require_same_dims(const FeatureMap<T>& a, const FeatureMap<T>& b, const char* what) {
  if (a.c != b.c || a.b != b.b || a.h != b.h || a.w != b.w) {
    throw Error(ErrorKind::kShapeMismatch, std::string(what) + ": gradient shape mismatch");
  }
}

// Eigen's reductions peel to the buffer's alignment, which makes the result
// depend on where the heap put it. Fixed order keeps training reproducible.
template <typename T>
T ordered_sum(const T* p, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += p[i];
  return s;
}

template <typename T>
FeatureMap<T> dims_of(const FeatureMap<T>& f) {
  FeatureMap<T> d;
  d.c = f.c;
  d.b = f.b;
  d.h = f.h;
  d.w = f.w;
  return d;
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, int kernel,
                  int stride, int padding)
    : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding) {
  if (in_ < 1 || out_ < 1 || k_ < 1 || stride_ < 1 || pad_ < 0) {
    throw Error(ErrorKind::kInvalidSpec, "invalid convolution configuration for " + name);
  }
  weight_.name = name + ".weight";
  weight_.shape = {out_, in_, k_, k_};
  weight_.init = ParamInit::kKaiming;
  weight_.fan_in = in_ * k_ * k_;
  bias_.name = name + ".bias";
  bias_.shape = {out_};
}

// Output columns x whose input column x*stride - pad + kw lies in [0, w).
template <typename T>
int Conv2d<T>::valid_begin(int kw) const {
  const int num = pad_ - kw;
  return num <= 0 ? 0 : (num + stride_ - 1) / stride_;
}

template <typename T>
int Conv2d<T>::valid_end(int kw, int w, int ow) const {
  const int num = w - 1 + pad_ - kw;
  if (num < 0) return 0;
  return std::min(ow, num / stride_ + 1);
}

template <typename T>
Shape3 Conv2d<T>::output_shape(Shape3 in) const {
  if (in.c != in_) {
    throw Error(ErrorKind::kShapeMismatch, "conv expects " + std::to_string(in_) +
                                               " channels, got " + shape_text(in));
  }
  const int oh = (in.h + 2 * pad_ - k_) / stride_ + 1;
  const int ow = (in.w + 2 * pad_ - k_) / stride_ + 1;
  if (in.h + 2 * pad_ < k_ || in.w + 2 * pad_ < k_ || oh < 1 || ow < 1) {
    throw Error(ErrorKind::kSpatialUnderflow, "conv input " + shape_text(in) + " too small");
  }
  return {out_, oh, ow};
}

template <typename T>
FeatureMap<T> Conv2d<T>::forward(const FeatureMap<T>& in, bool training) {
  const Shape3 os = output_shape({in.c, in.h, in.w});
  const int oh = os.h;
  const int ow = os.w;
  const std::size_t rows = static_cast<std::size_t>(in_) * k_ * k_;
  const std::size_t cols = static_cast<std::size_t>(in.b) * oh * ow;

  // The column buffer is reused across calls; every entry is overwritten below.
  std::vector<T>& col = training ? cols_ : scratch_;
  col.resize(rows * cols);
  for (int ci = 0; ci < in_; ++ci) {
    for (int kh = 0; kh < k_; ++kh) {
      for (int kw = 0; kw < k_; ++kw) {
        T* dst = col.data() + ((static_cast<std::size_t>(ci) * k_ + kh) * k_ + kw) * cols;
        for (int bi = 0; bi < in.b; ++bi) {
          for (int y = 0; y < oh; ++y) {
            const int iy = y * stride_ - pad_ + kh;
            T* row = dst + (static_cast<std::size_t>(bi) * oh + y) * ow;
            if (iy < 0 || iy >= in.h) {
              std::fill(row, row + ow, T(0));
              continue;
            }
            const T* src = in.v.data() + in.offset(ci, bi, iy, 0);
            const int x0 = valid_begin(kw);
            const int x1 = valid_end(kw, in.w, ow);
            std::fill(row, row + x0, T(0));
            if (stride_ == 1) {
              std::copy(src + x0 - pad_ + kw, src + x1 - pad_ + kw, row + x0);
            } else {
              for (int x = x0; x < x1; ++x) row[x] = src[x * stride_ - pad_ + kw];
            }
            std::fill(row + std::max(x0, x1), row + ow, T(0));
          }
        }
      }
    }
  }

  FeatureMap<T> out(out_, in.b, oh, ow);
  ConstMatMap<T> wmat(weight_.value.data(), out_, static_cast<Eigen::Index>(rows));
  ConstMatMap<T> cmat(col.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  MatMap<T> omat(out.v.data(), out_, static_cast<Eigen::Index>(cols));
  omat.noalias() = wmat * cmat;
  for (int co = 0; co < out_; ++co) omat.row(co).array() += bias_.value[co];

  if (training) {
    input_shape_ = dims_of(in);
    out_h_ = oh;
    out_w_ = ow;
  }
  return out;
}

template <typename T>
FeatureMap<T> Conv2d<T>::backward(const FeatureMap<T>& grad_out) {
  const FeatureMap<T>& in = input_shape_;
  if (grad_out.c != out_ || grad_out.b != in.b || grad_out.h != out_h_ || grad_out.w != out_w_) {
    throw Error(ErrorKind::kShapeMismatch, "conv backward: gradient shape mismatch");
  }
  const std::size_t rows = static_cast<std::size_t>(in_) * k_ * k_;
  const std::size_t cols = static_cast<std::size_t>(in.b) * out_h_ * out_w_;

  ConstMatMap<T> gmat(grad_out.v.data(), out_, static_cast<Eigen::Index>(cols));
  ConstMatMap<T> cmat(cols_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  MatMap<T> dw(weight_.grad.data(), out_, static_cast<Eigen::Index>(rows));
  dw.noalias() += gmat * cmat.transpose();
  for (int co = 0; co < out_; ++co) bias_.grad[co] += ordered_sum(gmat.row(co).data(), cols);

  ConstMatMap<T> wmat(weight_.value.data(), out_, static_cast<Eigen::Index>(rows));
  scratch_.resize(rows * cols);
  MatMap<T> dcol(scratch_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  dcol.noalias() = wmat.transpose() * gmat;

  FeatureMap<T> grad_in(in_, in.b, in.h, in.w);
  for (int ci = 0; ci < in_; ++ci) {
    for (int kh = 0; kh < k_; ++kh) {
      for (int kw = 0; kw < k_; ++kw) {
        const T* src = dcol.data() + ((static_cast<std::size_t>(ci) * k_ + kh) * k_ + kw) * cols;
        for (int bi = 0; bi < in.b; ++bi) {
          for (int y = 0; y < out_h_; ++y) {
            const int iy = y * stride_ - pad_ + kh;
            if (iy < 0 || iy >= in.h) continue;
            const T* row = src + (static_cast<std::size_t>(bi) * out_h_ + y) * out_w_;
            T* dst = grad_in.v.data() + grad_in.offset(ci, bi, iy, 0);
            const int x0 = valid_begin(kw);
            const int x1 = valid_end(kw, in.w, out_w_);
            if (stride_ == 1) {
              const int shift = kw - pad_;
              for (int x = x0; x < x1; ++x) dst[x + shift] += row[x];
            } else {
              for (int x = x0; x < x1; ++x) dst[x * stride_ - pad_ + kw] += row[x];
            }
          }
        }
      }
    }
  }
  return grad_in;
}

template <typename T>
void Conv2d<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------ Activation

template <typename T>
T Activation<T>::apply(ActivationKind kind, T x) {
  if (kind == ActivationKind::kRelu) return x > T(0) ? x : T(0);
  // max(x, 0) + log1p(exp(-|x|)), clamped to the smallest positive value so
  // the result stays strictly positive where exp underflows.
  const T v = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  return std::max(v, std::numeric_limits<T>::denorm_min());
}

template <typename T>
T Activation<T>::derivative(ActivationKind kind, T x) {
  if (kind == ActivationKind::kRelu) return x > T(0) ? T(1) : T(0);
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
FeatureMap<T> Activation<T>::forward(const FeatureMap<T>& in, bool training) {
  FeatureMap<T> out = dims_of(in);
  out.v.resize(in.v.size());
  if (kind_ == ActivationKind::kRelu) {
    for (std::size_t i = 0; i < in.v.size(); ++i) out.v[i] = in.v[i] > T(0) ? in.v[i] : T(0);
  } else {
    for (std::size_t i = 0; i < in.v.size(); ++i) out.v[i] = apply(kind_, in.v[i]);
  }
  if (training) input_ = in;
  return out;
}

template <typename T>
FeatureMap<T> Activation<T>::backward(const FeatureMap<T>& grad_out) {
  require_same_dims(grad_out, input_, "activation");
  FeatureMap<T> grad_in = dims_of(grad_out);
  grad_in.v.resize(grad_out.v.size());
  if (kind_ == ActivationKind::kRelu) {
    for (std::size_t i = 0; i < grad_out.v.size(); ++i) {
      grad_in.v[i] = input_.v[i] > T(0) ? grad_out.v[i] : T(0);
    }
  } else {
    for (std::size_t i = 0; i < grad_out.v.size(); ++i) {
      grad_in.v[i] = grad_out.v[i] * derivative(kind_, input_.v[i]);
    }
  }
  return grad_in;
}

// ------------------------------------------------------------- MaxPool2d

template <typename T>
Shape3 MaxPool2d<T>::output_shape(Shape3 in) const {
  if (in.h < 2 || in.w < 2) {
    throw Error(ErrorKind::kSpatialUnderflow,
                "2x2 max-pool would reduce " + shape_text(in) + " below 1");
  }
  return {in.c, in.h / 2, in.w / 2};
}

template <typename T>
FeatureMap<T> MaxPool2d<T>::forward(const FeatureMap<T>& in, bool training) {
  const Shape3 os = output_shape({in.c, in.h, in.w});
  FeatureMap<T> out(in.c, in.b, os.h, os.w);
  std::vector<std::uint32_t> arg(out.size());
  std::size_t k = 0;
  for (int ci = 0; ci < in.c; ++ci) {
    for (int bi = 0; bi < in.b; ++bi) {
      for (int y = 0; y < os.h; ++y) {
        for (int x = 0; x < os.w; ++x, ++k) {
          std::size_t best = in.offset(ci, bi, 2 * y, 2 * x);
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = in.offset(ci, bi, 2 * y + dy, 2 * x + dx);
              if (in.v[idx] > in.v[best]) best = idx;
            }
          }
          out.v[k] = in.v[best];
          arg[k] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  if (training) {
    input_shape_ = dims_of(in);
    argmax_ = std::move(arg);
  }
  return out;
}

template <typename T>
FeatureMap<T> MaxPool2d<T>::backward(const FeatureMap<T>& grad_out) {
  if (grad_out.size() != argmax_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "maxpool backward: gradient shape mismatch");
  }
  FeatureMap<T> grad_in(input_shape_.c, input_shape_.b, input_shape_.h, input_shape_.w);
  for (std::size_t k = 0; k < argmax_.size(); ++k) grad_in.v[argmax_[k]] += grad_out.v[k];
  return grad_in;
}

// ----------------------------------------------------- AdaptiveMaxPool2d

template <typename T>
Shape3 AdaptiveMaxPool2d<T>::output_shape(Shape3 in) const {
  if (in.h < 1 || in.w < 1) {
    throw Error(ErrorKind::kSpatialUnderflow, "adaptive max-pool input " + shape_text(in) + " is empty");
  }
  return {in.c, out_h_, out_w_};
}

template <typename T>
FeatureMap<T> AdaptiveMaxPool2d<T>::forward(const FeatureMap<T>& in, bool training) {
  output_shape({in.c, in.h, in.w});
  FeatureMap<T> out(in.c, in.b, out_h_, out_w_);
  std::vector<std::uint32_t> arg(out.size());
  std::size_t k = 0;
  for (int ci = 0; ci < in.c; ++ci) {
    for (int bi = 0; bi < in.b; ++bi) {
      for (int y = 0; y < out_h_; ++y) {
        const int y0 = (y * in.h) / out_h_;
        const int y1 = ((y + 1) * in.h + out_h_ - 1) / out_h_;
        for (int x = 0; x < out_w_; ++x, ++k) {
          const int x0 = (x * in.w) / out_w_;
          const int x1 = ((x + 1) * in.w + out_w_ - 1) / out_w_;
          std::size_t best = in.offset(ci, bi, y0, x0);
          for (int yy = y0; yy < y1; ++yy) {
            for (int xx = x0; xx < x1; ++xx) {
              const std::size_t idx = in.offset(ci, bi, yy, xx);
              if (in.v[idx] > in.v[best]) best = idx;
            }
          }
          out.v[k] = in.v[best];
          arg[k] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  if (training) {
    input_shape_ = dims_of(in);
    argmax_ = std::move(arg);
  }
  return out;
}

template <typename T>
FeatureMap<T> AdaptiveMaxPool2d<T>::backward(const FeatureMap<T>& grad_out) {
  if (grad_out.size() != argmax_.size()) {
    throw Error(ErrorKind::kShapeMismatch, "adaptive maxpool backward: gradient shape mismatch");
  }
  FeatureMap<T> grad_in(input_shape_.c, input_shape_.b, input_shape_.h, input_shape_.w);
  for (std::size_t k = 0; k < argmax_.size(); ++k) grad_in.v[argmax_[k]] += grad_out.v[k];
  return grad_in;
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels) : channels_(channels) {
  gamma_.name = name + ".gamma";
  beta_.name = name + ".beta";
  running_mean_.name = name + ".running_mean";
  running_var_.name = name + ".running_var";
  for (auto* p : {&gamma_, &beta_, &running_mean_, &running_var_}) p->shape = {channels};
  gamma_.init = ParamInit::kOne;
  running_var_.init = ParamInit::kOne;
}

template <typename T>
Shape3 BatchNorm2d<T>::output_shape(Shape3 in) const {
  if (in.c != channels_) throw Error(ErrorKind::kShapeMismatch, "batchnorm channel mismatch");
  return in;
}

template <typename T>
FeatureMap<T> BatchNorm2d<T>::forward(const FeatureMap<T>& in, bool training) {
  output_shape({in.c, in.h, in.w});
  const std::size_t count = in.channel_size();
  FeatureMap<T> out = dims_of(in);
  out.v.resize(in.v.size());
  FeatureMap<T> normalized = dims_of(in);
  std::vector<T> inv_std(channels_);
  if (training) normalized.v.resize(in.v.size());

  for (int ci = 0; ci < channels_; ++ci) {
    const T* x = in.v.data() + ci * count;
    T* y = out.v.data() + ci * count;
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      for (std::size_t i = 0; i < count; ++i) mean += x[i];
      mean /= static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) var += (x[i] - mean) * (x[i] - mean);
      var /= static_cast<double>(count);
      const double unbiased = count > 1 ? var * count / (count - 1.0) : var;
      running_mean_.value[ci] = static_cast<T>((1.0 - kMomentum) * running_mean_.value[ci] + kMomentum * mean);
      running_var_.value[ci] = static_cast<T>((1.0 - kMomentum) * running_var_.value[ci] + kMomentum * unbiased);
    } else {
      mean = running_mean_.value[ci];
      var = running_var_.value[ci];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + kEps));
    inv_std[ci] = istd;
    const T m = static_cast<T>(mean);
    for (std::size_t i = 0; i < count; ++i) {
      const T xh = (x[i] - m) * istd;
      if (training) normalized.v[ci * count + i] = xh;
      y[i] = gamma_.value[ci] * xh + beta_.value[ci];
    }
  }
  if (training) {
    normalized_ = std::move(normalized);
    inv_std_ = std::move(inv_std);
    batch_stats_ = true;
  }
  return out;
}

template <typename T>
FeatureMap<T> BatchNorm2d<T>::backward(const FeatureMap<T>& grad_out) {
  require_same_dims(grad_out, normalized_, "batchnorm");
  const std::size_t count = grad_out.channel_size();
  FeatureMap<T> grad_in = dims_of(grad_out);
  grad_in.v.resize(grad_out.v.size());
  for (int ci = 0; ci < channels_; ++ci) {
    const T* dy = grad_out.v.data() + ci * count;
    const T* xh = normalized_.v.data() + ci * count;
    T* dx = grad_in.v.data() + ci * count;
    T sum_dy = 0;
    T sum_dy_xh = 0;
    for (std::size_t i = 0; i < count; ++i) {
      sum_dy += dy[i];
      sum_dy_xh += dy[i] * xh[i];
    }
    gamma_.grad[ci] += sum_dy_xh;
    beta_.grad[ci] += sum_dy;
    const T scale = gamma_.value[ci] * inv_std_[ci] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      dx[i] = scale * (static_cast<T>(count) * dy[i] - sum_dy - xh[i] * sum_dy_xh);
    }
  }
  return grad_in;
}

template <typename T>
void BatchNorm2d<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(std::vector<Param<T>*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// --------------------------------------------------------------- Flatten

template <typename T>
FeatureMap<T> Flatten<T>::forward(const FeatureMap<T>& in, bool training) {
  const int features = in.c * in.h * in.w;
  FeatureMap<T> out(features, in.b, 1, 1);
  const std::size_t plane = in.plane();
  for (int ci = 0; ci < in.c; ++ci) {
    for (int bi = 0; bi < in.b; ++bi) {
      const T* src = in.v.data() + in.offset(ci, bi, 0, 0);
      for (std::size_t p = 0; p < plane; ++p) {
        out.v[(ci * plane + p) * in.b + bi] = src[p];
      }
    }
  }
  if (training) input_shape_ = dims_of(in);
  return out;
}

template <typename T>
FeatureMap<T> Flatten<T>::backward(const FeatureMap<T>& grad_out) {
  const FeatureMap<T>& in = input_shape_;
  FeatureMap<T> grad_in(in.c, in.b, in.h, in.w);
  const std::size_t plane = grad_in.plane();
  for (int ci = 0; ci < in.c; ++ci) {
    for (int bi = 0; bi < in.b; ++bi) {
      T* dst = grad_in.v.data() + grad_in.offset(ci, bi, 0, 0);
      for (std::size_t p = 0; p < plane; ++p) {
        dst[p] = grad_out.v[(ci * plane + p) * in.b + bi];
      }
    }
  }
  return grad_in;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : in_(in_features), out_(out_features) {
  if (in_ < 1 || out_ < 1) throw Error(ErrorKind::kInvalidSpec, "invalid linear layer " + name);
  weight_.name = name + ".weight";
  weight_.shape = {out_, in_};
  weight_.init = ParamInit::kKaiming;
  weight_.fan_in = in_;
  bias_.name = name + ".bias";
  bias_.shape = {out_};
}

template <typename T>
Shape3 Linear<T>::output_shape(Shape3 in) const {
  if (in.c * in.h * in.w != in_) {
    throw Error(ErrorKind::kShapeMismatch, "fc expects " + std::to_string(in_) +
                                               " features, got " + shape_text(in));
  }
  return {out_, 1, 1};
}

template <typename T>
FeatureMap<T> Linear<T>::forward(const FeatureMap<T>& in, bool training) {
  if (in.c != in_ || in.h != 1 || in.w != 1) output_shape({in.c, in.h, in.w});
  FeatureMap<T> out(out_, in.b, 1, 1);
  ConstMatMap<T> wmat(weight_.value.data(), out_, in_);
  ConstMatMap<T> xmat(in.v.data(), in_, in.b);
  MatMap<T> ymat(out.v.data(), out_, in.b);
  ymat.noalias() = wmat * xmat;
  for (int o = 0; o < out_; ++o) ymat.row(o).array() += bias_.value[o];
  if (training) input_ = in;
  return out;
}

template <typename T>
FeatureMap<T> Linear<T>::backward(const FeatureMap<T>& grad_out) {
  if (grad_out.c != out_ || grad_out.b != input_.b) {
    throw Error(ErrorKind::kShapeMismatch, "fc backward: gradient shape mismatch");
  }
  ConstMatMap<T> gmat(grad_out.v.data(), out_, grad_out.b);
  ConstMatMap<T> xmat(input_.v.data(), in_, input_.b);
  MatMap<T> dw(weight_.grad.data(), out_, in_);
  dw.noalias() += gmat * xmat.transpose();
  for (int o = 0; o < out_; ++o) bias_.grad[o] += ordered_sum(gmat.row(o).data(), static_cast<std::size_t>(grad_out.b));
  FeatureMap<T> grad_in(in_, grad_out.b, 1, 1);
  ConstMatMap<T> wmat(weight_.value.data(), out_, in_);
  MatMap<T> dx(grad_in.v.data(), in_, grad_out.b);
  dx.noalias() = wmat.transpose() * gmat;
  return grad_in;
}

template <typename T>
void Linear<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------ Sequential

template <typename T>
Shape3 Sequential<T>::output_shape(Shape3 in) const {
  for (const auto& l : layers_) in = l->output_shape(in);
  return in;
}

template <typename T>
FeatureMap<T> Sequential<T>::forward(const FeatureMap<T>& in, bool training) {
  if (layers_.empty()) return in;
  FeatureMap<T> cur = layers_.front()->forward(in, training);
  for (std::size_t i = 1; i < layers_.size(); ++i) cur = layers_[i]->forward(cur, training);
  return cur;
}

template <typename T>
FeatureMap<T> Sequential<T>::backward(const FeatureMap<T>& grad_out) {
  if (layers_.empty()) return grad_out;
  FeatureMap<T> g = layers_.back()->backward(grad_out);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect_params(std::vector<Param<T>*>& out) {
  for (auto& l : layers_) l->collect_params(out);
}

template <typename T>
void Sequential<T>::collect_buffers(std::vector<Param<T>*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

// ------------------------------------------------------------- Broadcast

template <typename T>
Shape3 Broadcast<T>::output_shape(Shape3 in) const {
  if (in.h != 1 || in.w != 1) throw Error(ErrorKind::kShapeMismatch, "broadcast expects (c, 1, 1)");
  return {in.c, h_, w_};
}

template <typename T>
FeatureMap<T> Broadcast<T>::forward(const FeatureMap<T>& in, bool /*training*/) {
  output_shape({in.c, in.h, in.w});
  FeatureMap<T> out(in.c, in.b, h_, w_);
  const std::size_t plane = out.plane();
  for (std::size_t k = 0; k < in.v.size(); ++k) {
    std::fill_n(out.v.begin() + static_cast<std::ptrdiff_t>(k * plane), plane, in.v[k]);
  }
  return out;
}

template <typename T>
FeatureMap<T> Broadcast<T>::backward(const FeatureMap<T>& grad_out) {
  FeatureMap<T> grad_in(grad_out.c, grad_out.b, 1, 1);
  const std::size_t plane = grad_out.plane();
  for (std::size_t k = 0; k < grad_in.v.size(); ++k) {
    T s = 0;
    for (std::size_t p = 0; p < plane; ++p) s += grad_out.v[k * plane + p];
    grad_in.v[k] = s;
  }
  return grad_in;
}

// ----------------------------------------------------------- PixelAffine

template <typename T>
PixelAffine<T>::PixelAffine(std::string name, int h, int w) : h_(h), w_(w) {
  weight_.name = name + ".weight";
  weight_.shape = {h, w};
  weight_.init = ParamInit::kOne;
  bias_.name = name + ".bias";
  bias_.shape = {h, w};
}

template <typename T>
Shape3 PixelAffine<T>::output_shape(Shape3 in) const {
  if (in.h != h_ || in.w != w_) throw Error(ErrorKind::kShapeMismatch, "pixel affine plane mismatch");
  return in;
}

template <typename T>
FeatureMap<T> PixelAffine<T>::forward(const FeatureMap<T>& in, bool training) {
  output_shape({in.c, in.h, in.w});
  FeatureMap<T> out = in;
  const std::size_t plane = in.plane();
  for (std::size_t k = 0; k < out.v.size(); k += plane) {
    for (std::size_t p = 0; p < plane; ++p) out.v[k + p] = in.v[k + p] * weight_.value[p] + bias_.value[p];
  }
  if (training) input_ = in;
  return out;
}

template <typename T>
FeatureMap<T> PixelAffine<T>::backward(const FeatureMap<T>& grad_out) {
  require_same_dims(grad_out, input_, "pixel affine");
  FeatureMap<T> grad_in = grad_out;
  const std::size_t plane = grad_out.plane();
  for (std::size_t k = 0; k < grad_out.v.size(); k += plane) {
    for (std::size_t p = 0; p < plane; ++p) {
      weight_.grad[p] += grad_out.v[k + p] * input_.v[k + p];
      bias_.grad[p] += grad_out.v[k + p];
      grad_in.v[k + p] = grad_out.v[k + p] * weight_.value[p];
    }
  }
  return grad_in;
}

template <typename T>
void PixelAffine<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// --------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(const std::string& name, int in_channels,
                                int out_channels, bool downsample, bool batch_norm)
    : downsample_(downsample), pre_(ActivationKind::kRelu) {
  if (!downsample && in_channels != out_channels) {
    throw Error(ErrorKind::kInvalidSpec, name + ": identity shortcut needs equal channels");
  }
  const int stride = downsample ? 2 : 1;
  body_.add(std::make_unique<Conv2d<T>>(name + ".conv1", in_channels, out_channels, 3, stride, 1));
  if (batch_norm) body_.add(std::make_unique<BatchNorm2d<T>>(name + ".bn1", out_channels));
  body_.add(std::make_unique<Activation<T>>(ActivationKind::kRelu));
  body_.add(std::make_unique<Conv2d<T>>(name + ".conv2", out_channels, out_channels, 3, 1, 1));
  if (batch_norm) body_.add(std::make_unique<BatchNorm2d<T>>(name + ".bn2", out_channels));
  if (downsample) {
    projection_ = std::make_unique<Sequential<T>>();
    projection_->add(std::make_unique<Conv2d<T>>(name + ".proj", in_channels, out_channels, 1, 2, 0));
    if (batch_norm) projection_->add(std::make_unique<BatchNorm2d<T>>(name + ".proj_bn", out_channels));
  }
}

template <typename T>
Shape3 ResidualBlock<T>::output_shape(Shape3 in) const {
  const Shape3 main = body_.output_shape(in);
  if (projection_ && projection_->output_shape(in) != main) {
    throw Error(ErrorKind::kShapeMismatch, "residual projection shape mismatch");
  }
  return main;
}

template <typename T>
FeatureMap<T> ResidualBlock<T>::forward(const FeatureMap<T>& in, bool training) {
  FeatureMap<T> a = pre_.forward(in, training);
  FeatureMap<T> out = body_.forward(a, training);
  if (projection_) {
    FeatureMap<T> s = projection_->forward(a, training);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += s.v[i];
  } else {
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += in.v[i];
  }
  return out;
}

template <typename T>
FeatureMap<T> ResidualBlock<T>::backward(const FeatureMap<T>& grad_out) {
  FeatureMap<T> ga = body_.backward(grad_out);
  if (projection_) {
    FeatureMap<T> gp = projection_->backward(grad_out);
    for (std::size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += gp.v[i];
    return pre_.backward(ga);
  }
  FeatureMap<T> gx = pre_.backward(ga);
  for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] += grad_out.v[i];
  return gx;
}

template <typename T>
void ResidualBlock<T>::collect_params(std::vector<Param<T>*>& out) {
  body_.collect_params(out);
  if (projection_) projection_->collect_params(out);
}

template <typename T>
void ResidualBlock<T>::collect_buffers(std::vector<Param<T>*>& out) {
  body_.collect_buffers(out);
  if (projection_) projection_->collect_buffers(out);
}

// ------------------------------------------------------------------ fuse

template <typename T>
FeatureMap<T> fuse(const FeatureMap<T>& backbone, const FeatureMap<T>& pi) {
  if (pi.c != backbone.c || pi.h != backbone.h || pi.w != backbone.w || pi.b != 1) {
    throw Error(ErrorKind::kShapeMismatch, "fuse: PI features must be (c, 1, h, w) matching the backbone");
  }
  FeatureMap<T> out = backbone;
  const std::size_t plane = backbone.plane();
  for (int ci = 0; ci < backbone.c; ++ci) {
    const T* p = pi.v.data() + pi.offset(ci, 0, 0, 0);
    for (int bi = 0; bi < backbone.b; ++bi) {
      T* o = out.v.data() + out.offset(ci, bi, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) o[k] *= p[k];
    }
  }
  return out;
}

template <typename T>
FuseGrad<T> fuse_backward(const FeatureMap<T>& grad_out, const FeatureMap<T>& backbone,
                          const FeatureMap<T>& pi) {
  require_same_dims(grad_out, backbone, "fuse");
  FuseGrad<T> g;
  g.d_backbone = fuse(grad_out, pi);
  g.d_pi = FeatureMap<T>(pi.c, 1, pi.h, pi.w);
  const std::size_t plane = backbone.plane();
  for (int ci = 0; ci < backbone.c; ++ci) {
    T* dp = g.d_pi.v.data() + g.d_pi.offset(ci, 0, 0, 0);
    for (int bi = 0; bi < backbone.b; ++bi) {
      const T* go = grad_out.v.data() + grad_out.offset(ci, bi, 0, 0);
      const T* bb = backbone.v.data() + backbone.offset(ci, bi, 0, 0);
      for (std::size_t k = 0; k < plane; ++k) dp[k] += go[k] * bb[k];
    }
  }
  return g;
}

#define LINTOMO_INSTANTIATE_LAYERS(T)                                                   \
  template class Conv2d<T>;                                                             \
  template class Activation<T>;                                                         \
  template class MaxPool2d<T>;                                                          \
  template class AdaptiveMaxPool2d<T>;                                                  \
  template class BatchNorm2d<T>;                                                        \
  template class Flatten<T>;                                                            \
  template class Linear<T>;                                                             \
  template class Broadcast<T>;                                                          \
  template class PixelAffine<T>;                                                        \
  template class Sequential<T>;                                                         \
  template class ResidualBlock<T>;                                                      \
  template FeatureMap<T> fuse<T>(const FeatureMap<T>&, const FeatureMap<T>&);           \
  template FuseGrad<T> fuse_backward<T>(const FeatureMap<T>&, const FeatureMap<T>&,     \
                                        const FeatureMap<T>&);

LINTOMO_INSTANTIATE_LAYERS(float)
LINTOMO_INSTANTIATE_LAYERS(double)

#undef LINTOMO_INSTANTIATE_LAYERS

}  // namespace lintomo
