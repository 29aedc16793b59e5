#pragma once

// Fully connected ReLU embedding networks with analytic backpropagation,
// an additive-angular-margin (ArcFace) classification head, and momentum SGD.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "coupleface/data_io.hpp"
#include "coupleface/vec_math.hpp"

namespace coupleface {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

enum class Activation { kRelu };

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t embed_dim = 0;
  Activation activation = Activation::kRelu;

  // Throws InvalidSpec unless embed_dim >= 2 and every dim >= 1.
  void validate() const;
  // input_dim, hidden_dims..., embed_dim.
  std::vector<std::size_t> layer_dims() const;

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// y = x W^T + b, with W stored out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(MlpSpec spec, std::vector<DenseLayer> layers);

  const MlpSpec& spec() const noexcept { return spec_; }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  // Mutable access invalidates outstanding forward caches.
  std::vector<DenseLayer>& mutable_layers();

  std::size_t num_parameters() const;
  bool all_finite() const;
  // Identifies the current parameter values; changes on every mutation.
  std::uint64_t stamp() const noexcept { return stamp_; }

  friend bool operator==(const MlpModel& a, const MlpModel& b) {
    return a.spec_ == b.spec_ && a.layers_ == b.layers_;
  }

 private:
  MlpSpec spec_;
  std::vector<DenseLayer> layers_;
  std::uint64_t stamp_ = 0;
};

// Per-parameter gradients, shaped like the model's layers.
struct GradientSet {
  std::vector<DenseLayer> layers;
};

// Activations saved by mlp_forward for mlp_backward.
struct ForwardCache {
  std::uint64_t stamp = 0;
  // inputs[l] is the input to layer l; pre_activations[l] its affine output.
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre_activations;
};

struct ForwardResult {
  Matrix embeddings;
  ForwardCache cache;
};

// Glorot-uniform weights, zero biases.
MlpModel mlp_init(const MlpSpec& spec, std::uint64_t seed);

ForwardResult mlp_forward(const MlpModel& model, const Matrix& inputs);
// Forward pass without keeping the cache.
Matrix mlp_embed(const MlpModel& model, const Matrix& inputs);

// Throws StaleCache when `cache` was not produced from the model's current
// parameters.
GradientSet mlp_backward(const MlpModel& model, const ForwardCache& cache,
                         const Matrix& grad_embeddings);

struct ArcHead {
  Matrix class_weights;  // M x d, rows normalized on use
  double scale = 16.0;
  double margin = 0.3;
};

// Unit-norm rows drawn uniformly on the sphere.
ArcHead arc_head_init(std::size_t num_classes, std::size_t embed_dim, double scale,
                      double margin, std::uint64_t seed);

struct ArcFaceResult {
  double loss = 0.0;
  Matrix grad_embeddings;
  Matrix grad_class_weights;
};

// Mean cross-entropy over logits s*cos(theta_j), with the target logit
// replaced by s*cos(theta_y + m) (linearized past theta + m > pi).
ArcFaceResult arcface_loss(const Matrix& embeddings, std::span<const Label> labels,
                           const ArcHead& head);

// v <- momentum*v + g + weight_decay*p;  p <- p - lr*v.
void sgd_update(std::span<double> params, std::span<const double> grads,
                std::span<double> velocity, double lr, double momentum, double weight_decay);

// Momentum SGD holding velocity buffers for one model and, optionally, a head.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(MlpModel& model, const GradientSet& grads, double lr);
  void step(ArcHead& head, const Matrix& grad_class_weights, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<DenseLayer> model_velocity_;
  Matrix head_velocity_;
};

// CFMD: magic, version u32, dim count u32, dims u32[], then per layer the
// weight (row-major) and bias as f32, all little-endian.
void write_checkpoint(const std::filesystem::path& path, const MlpModel& model);
MlpModel read_checkpoint(const std::filesystem::path& path);

}  // namespace coupleface
