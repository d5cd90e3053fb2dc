#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lintomo {

// Activations are stored channel-major across the batch: (c, b, h, w). A
// convolution then becomes one GEMM over all samples without transposes, and
// every per-channel reduction (batch norm, fusion) is a contiguous block.
template <typename T>
struct FeatureMap {
  int c = 0, b = 0, h = 0, w = 0;
  std::vector<T> v;

  FeatureMap() = default;
  FeatureMap(int c_, int b_, int h_, int w_, T fill = T(0))
      : c(c_), b(b_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * b_ * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t channel_size() const { return plane() * b; }
  std::size_t size() const { return v.size(); }
  std::size_t offset(int ci, int bi, int hi, int wi) const {
    return ((static_cast<std::size_t>(ci) * b + bi) * h + hi) * w + wi;
  }
  T& at(int ci, int bi, int hi, int wi) { return v[offset(ci, bi, hi, wi)]; }
  T at(int ci, int bi, int hi, int wi) const { return v[offset(ci, bi, hi, wi)]; }
};

struct Shape3 {
  int c = 0, h = 0, w = 0;
  bool operator==(const Shape3&) const = default;
};

// A named tensor owned by a layer. Buffers (batch-norm running statistics) use
// the same type but are excluded from the trainable parameter list.
enum class ParamInit { kZero, kOne, kKaiming };

template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;
  ParamInit init = ParamInit::kZero;
  int fan_in = 0;  // used by kKaiming

  std::size_t count() const {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
  void allocate() {
    value.assign(count(), T(0));
    grad.assign(count(), T(0));
  }
};

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  // Throws SpatialUnderflow / ShapeMismatch for inputs the layer cannot take.
  virtual Shape3 output_shape(Shape3 in) const = 0;
  // `training` records what backward needs and selects batch statistics.
  virtual FeatureMap<T> forward(const FeatureMap<T>& in, bool training) = 0;
  // Accumulates parameter gradients and returns the gradient w.r.t. the input
  // of the most recent training-mode forward.
  virtual FeatureMap<T> backward(const FeatureMap<T>& grad_out) = 0;

  virtual void collect_params(std::vector<Param<T>*>& /*out*/) {}
  virtual void collect_buffers(std::vector<Param<T>*>& /*out*/) {}
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride,
         int padding);

  std::string kind() const override { return "conv"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  int valid_begin(int kw) const;
  int valid_end(int kw, int w, int ow) const;

  int in_, out_, k_, stride_, pad_;
  Param<T> weight_;  // (out, in, k, k)
  Param<T> bias_;    // (out)
  std::vector<T> cols_;     // im2col of the last input
  std::vector<T> scratch_;  // column gradients
  FeatureMap<T> input_shape_;  // dims only
  int out_h_ = 0, out_w_ = 0;
};

enum class ActivationKind { kRelu, kSoftplus };

template <typename T>
class Activation final : public Layer<T> {
 public:
  explicit Activation(ActivationKind kind) : kind_(kind) {}

  std::string kind() const override {
    return kind_ == ActivationKind::kRelu ? "relu" : "softplus";
  }
  Shape3 output_shape(Shape3 in) const override { return in; }
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;

  static T apply(ActivationKind kind, T x);
  static T derivative(ActivationKind kind, T x);

 private:
  ActivationKind kind_;
  FeatureMap<T> input_;
};

// 2x2 window, stride 2, floor semantics (odd trailing rows/cols dropped).
template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  std::string kind() const override { return "maxpool"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;

 private:
  FeatureMap<T> input_shape_;
  std::vector<std::uint32_t> argmax_;
};

// Window i spans [floor(i*H/out), ceil((i+1)*H/out)), so any H >= 1 works.
template <typename T>
class AdaptiveMaxPool2d final : public Layer<T> {
 public:
  AdaptiveMaxPool2d(int out_h, int out_w) : out_h_(out_h), out_w_(out_w) {}

  std::string kind() const override { return "adaptive_maxpool"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;

 private:
  int out_h_, out_w_;
  FeatureMap<T> input_shape_;
  std::vector<std::uint32_t> argmax_;
};

template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  BatchNorm2d(std::string name, int channels);

  std::string kind() const override { return "batchnorm"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;
  void collect_buffers(std::vector<Param<T>*>& out) override;

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

 private:
  int channels_;
  Param<T> gamma_, beta_;
  Param<T> running_mean_, running_var_;
  FeatureMap<T> normalized_;
  std::vector<T> inv_std_;
  bool batch_stats_ = false;
};

// (c, b, h, w) -> (c*h*w, b, 1, 1); feature order is (c, h, w) per sample.
template <typename T>
class Flatten final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape3 output_shape(Shape3 in) const override { return {in.c * in.h * in.w, 1, 1}; }
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;

 private:
  FeatureMap<T> input_shape_;
};

// Fully connected over (features, b, 1, 1).
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, int in_features, int out_features);

  std::string kind() const override { return "fc"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  int in_, out_;
  Param<T> weight_;  // (out, in)
  Param<T> bias_;
  FeatureMap<T> input_;
};

template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr<T>> layers) : layers_(std::move(layers)) {}

  void add(LayerPtr<T> layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i); }

  std::string kind() const override { return "sequential"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;
  void collect_buffers(std::vector<Param<T>*>& out) override;

 private:
  std::vector<LayerPtr<T>> layers_;
};

// (c, b, 1, 1) -> (c, b, h, w): every scalar becomes a constant plane.
template <typename T>
class Broadcast final : public Layer<T> {
 public:
  Broadcast(int h, int w) : h_(h), w_(w) {}

  std::string kind() const override { return "broadcast"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;

 private:
  int h_, w_;
};

// y[c, b, p] = x[c, b, p] * weight[p] + bias[p], one (h, w) map shared by all
// channels.
template <typename T>
class PixelAffine final : public Layer<T> {
 public:
  PixelAffine(std::string name, int h, int w);

  std::string kind() const override { return "pixel_affine"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

 private:
  int h_, w_;
  Param<T> weight_, bias_;
  FeatureMap<T> input_;
};

// Pre-activation residual block: out = F(relu(x)) + S, where F is two 3x3
// convolutions with a ReLU between them and S is x itself, or a 1x1 stride-2
// projection of relu(x) when the block downsamples. With batch_norm each conv
// (projection included) is followed by BatchNorm2d.
template <typename T>
class ResidualBlock final : public Layer<T> {
 public:
  ResidualBlock(const std::string& name, int in_channels, int out_channels,
                bool downsample, bool batch_norm);

  std::string kind() const override { return "residual"; }
  Shape3 output_shape(Shape3 in) const override;
  FeatureMap<T> forward(const FeatureMap<T>& in, bool training) override;
  FeatureMap<T> backward(const FeatureMap<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;
  void collect_buffers(std::vector<Param<T>*>& out) override;

 private:
  bool downsample_;
  Activation<T> pre_;
  Sequential<T> body_;
  std::unique_ptr<Sequential<T>> projection_;
};

// Element-wise product of backbone features (c, b, h, w) with a single PI map
// (c, 1, h, w) broadcast over the batch.
template <typename T>
FeatureMap<T> fuse(const FeatureMap<T>& backbone, const FeatureMap<T>& pi);

template <typename T>
struct FuseGrad {
  FeatureMap<T> d_backbone;  // grad_out * pi
  FeatureMap<T> d_pi;        // sum over batch of grad_out * backbone
};

template <typename T>
FuseGrad<T> fuse_backward(const FeatureMap<T>& grad_out, const FeatureMap<T>& backbone,
                          const FeatureMap<T>& pi);

}  // namespace lintomo
