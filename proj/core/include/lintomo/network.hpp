#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lintomo/archive.hpp"
#include "lintomo/geometry.hpp"
#include "lintomo/layers.hpp"

namespace lintomo {

enum class Backbone { kVgg, kRes };

// How the length-n measurement vector becomes an (n, numz, numr) block.
//   kBroadcastConv: constant planes followed by a 3x3 n->n convolution.
//   kPixelAffine:   constant planes scaled and shifted by one learnable
//                   (numz, numr) weight/bias pair shared across channels.
enum class InputMode { kBroadcastConv, kPixelAffine };

struct ModelSpec {
  Backbone backbone = Backbone::kVgg;
  bool use_pi = false;
  ActivationKind final_activation = ActivationKind::kSoftplus;
  int n = 1;
  int numz = 1;
  int numr = 1;

  InputMode input_mode = InputMode::kBroadcastConv;
  bool batch_norm = false;
  // A res backbone without PI may skip the final 3x3 adaptive pool and feed
  // its full stride-8 map to the head.
  bool res_pool_without_pi = true;

  // Throws InvalidSpec.
  void validate() const;
  // "VggOnion", "ResOnion_PI", ...
  std::string name() const;
  std::size_t output_size() const { return static_cast<std::size_t>(numz) * numr; }

  // The layout whose parameter totals equal the published ones: per-pixel
  // affine input lift, batch norm after every convolution, and no adaptive
  // pool on the plain res backbone.
  static ModelSpec reference_layout(Backbone backbone, bool use_pi, ActivationKind head,
                                    int n, int numz, int numr);

  bool operator==(const ModelSpec&) const = default;
};

void to_json(nlohmann::json& j, const ModelSpec& spec);
void from_json(const nlohmann::json& j, ModelSpec& spec);  // InvalidConfig / InvalidSpec
std::string spec_hash(const ModelSpec& spec);

struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t count = 0;
};

struct LayerCount {
  std::string layer;  // parameter name without its trailing component
  std::size_t count = 0;
};

// Counted from layer shapes; nothing is allocated, so paper-scale specs are cheap.
std::vector<ParamEntry> parameter_table(const ModelSpec& spec);
std::vector<LayerCount> layer_count_table(const ModelSpec& spec);
std::size_t parameter_count(const ModelSpec& spec);

// Parameters and buffers as plain f32 arrays in construction order.
struct Weights {
  std::string spec_hash;
  std::vector<NamedArray> params;
  std::vector<NamedArray> buffers;

  std::size_t scalar_count() const;
  bool operator==(const Weights&) const = default;
};

enum class InitMode { kKaiming, kZero };

template <typename T>
class Model {
 public:
  // Builds structure only; call initialize() or import_weights() before use.
  explicit Model(const ModelSpec& spec);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelSpec& spec() const { return spec_; }
  bool allocated() const { return allocated_; }

  // Kaiming fan-in normal for conv/fc weights drawn in parameter order from
  // mt19937_64(seed); zero biases; unit scales. kZero zeroes every parameter.
  void initialize(std::uint64_t seed, InitMode mode = InitMode::kKaiming);

  std::vector<Param<T>*> parameters();
  std::vector<Param<T>*> buffers();
  std::size_t parameter_count() const;

  // x is sample-major (batch, n); pi is the (n, numz, numr) side-chain input
  // and must be empty iff the spec has no PI branch. Returns (batch, numz*numr).
  std::vector<T> forward(std::span<const T> x, int batch, std::span<const T> pi,
                         bool training = false);
  // Gradient of a scalar w.r.t. the last training forward's output, same
  // layout. Accumulates into Param::grad.
  void backward(std::span<const T> grad_out);
  void zero_grad();

  Weights export_weights() const;
  // Throws SpecMismatch on a hash mismatch and FormatError on missing or
  // misshapen arrays.
  void import_weights(const Weights& weights);

  // Intermediate shapes, for diagnostics and tests.
  Shape3 backbone_output_shape() const;
  Shape3 side_output_shape() const;

  // Direct access for tests.
  Sequential<T>& lift() { return *lift_; }
  Sequential<T>& backbone() { return *backbone_; }
  Sequential<T>* side() { return side_.get(); }
  Sequential<T>& head() { return *head_; }

 private:
  ModelSpec spec_;
  bool allocated_ = false;
  std::size_t param_count_ = 0;
  std::unique_ptr<Sequential<T>> lift_, backbone_, side_, head_;
  // Cached by training forwards for the fusion backward.
  FeatureMap<T> backbone_out_, pi_out_;
  int batch_ = 0;
};

extern template class Model<float>;
extern template class Model<double>;

// The side-chain input: C reshaped to (n, numz, numr) and divided by its
// largest weight so the chain sees O(1) values.
std::vector<float> pi_input(const ContributionMatrix& cmatrix);

// The PI side chain alone: (n, h, w) -> (8n, 3, 3).
template <typename T>
std::unique_ptr<Sequential<T>> build_side_chain(int n, bool batch_norm = false,
                                                const std::string& prefix = "side");

void save_checkpoint(const Model<float>& model, const std::filesystem::path& path,
                     const nlohmann::json& extra = nlohmann::json::object());
Model<float> load_checkpoint(const std::filesystem::path& path);
// As above, but throws SpecMismatch unless the stored spec equals `expected`.
Model<float> load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);
// Reads the spec and extra metadata without materializing weights.
nlohmann::json read_checkpoint_meta(const std::filesystem::path& path);

// Single linear neuron used to compare the three ways of combining a dynamic
// input x with a static input x':
//   add:      out = w . (x + x') + b
//   concat:   out = w . [x, x'] + b
//   multiply: out = w . (x * x') + b
enum class FusionMode { kAdd, kConcat, kMultiply };

struct FusionProbeReport {
  FusionMode mode{};
  double output = 0.0;
  std::vector<double> weight_grad;     // d out / d w
  std::vector<double> weight_grad_fd;  // central differences
  std::vector<double> input_grad;      // d out / d x
  std::vector<double> input_grad_fd;
  double max_rel_error = 0.0;
};

// `weights` empty means all ones. Central differences use step h.
FusionProbeReport fusion_gradient_probe(FusionMode mode, std::span<const double> x,
                                        std::span<const double> x_pi,
                                        std::span<const double> weights = {},
                                        double bias = 0.0, double h = 1e-5);

}  // namespace lintomo
