#include "coupleface/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>

#include "coupleface/binary_io.hpp"
#include "coupleface/error.hpp"

namespace coupleface {

namespace {

std::uint64_t next_stamp() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

// out (N x o) = in (N x i) * W^T + b, W stored o x i.
Matrix affine(const Matrix& in, const DenseLayer& layer) {
  const std::size_t n = in.rows();
  const std::size_t n_in = layer.weight.cols();
  const std::size_t n_out = layer.weight.rows();
  Matrix wt(n_in, n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    for (std::size_t k = 0; k < n_in; ++k) wt(k, o) = layer.weight(o, k);
  }
  Matrix out(n, n_out);
  for (std::size_t r = 0; r < n; ++r) {
    double* z = out.row(r).data();
    std::copy(layer.bias.begin(), layer.bias.end(), z);
    const double* x = in.row(r).data();
    for (std::size_t k = 0; k < n_in; ++k) {
      const double xk = x[k];
      if (xk == 0.0) continue;
      const double* w = wt.row(k).data();
      for (std::size_t o = 0; o < n_out; ++o) z[o] += xk * w[o];
    }
  }
  return out;
}

void relu_inplace(Matrix& m) {
  for (double& x : m.flat()) x = x > 0.0 ? x : 0.0;
}

}  // namespace

void MlpSpec::validate() const {
  if (embed_dim < 2) fail(ErrorCode::kInvalidSpec, "embed_dim must be >= 2");
  if (input_dim < 1) fail(ErrorCode::kInvalidSpec, "input_dim must be >= 1");
  for (std::size_t h : hidden_dims) {
    if (h < 1) fail(ErrorCode::kInvalidSpec, "hidden dims must be >= 1");
  }
}

std::vector<std::size_t> MlpSpec::layer_dims() const {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(embed_dim);
  return dims;
}

MlpModel::MlpModel(MlpSpec spec, std::vector<DenseLayer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)), stamp_(next_stamp()) {
  spec_.validate();
  auto dims = spec_.layer_dims();
  if (layers_.size() + 1 != dims.size()) fail(ErrorCode::kShapeMismatch, "layer count does not match spec");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].weight.rows() != dims[l + 1] || layers_[l].weight.cols() != dims[l] ||
        layers_[l].bias.size() != dims[l + 1]) {
      fail(ErrorCode::kShapeMismatch, "layer " + std::to_string(l) + " shape does not match spec");
    }
  }
}

std::vector<DenseLayer>& MlpModel::mutable_layers() {
  stamp_ = next_stamp();
  return layers_;
}

std::size_t MlpModel::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

bool MlpModel::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.all_finite()) return false;
    for (double b : l.bias) {
      if (!std::isfinite(b)) return false;
    }
  }
  return true;
}

MlpModel mlp_init(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  auto dims = spec.layer_dims();
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l];
    const std::size_t fan_out = dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    DenseLayer layer{Matrix(fan_out, fan_in), Vector(fan_out, 0.0)};
    for (double& w : layer.weight.flat()) w = rng.uniform(-bound, bound);
    layers.push_back(std::move(layer));
  }
  return MlpModel(spec, std::move(layers));
}

ForwardResult mlp_forward(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.spec().input_dim) {
    fail(ErrorCode::kShapeMismatch, "input width " + std::to_string(inputs.cols()) +
                                        " != model input_dim " +
                                        std::to_string(model.spec().input_dim));
  }
  ForwardResult result;
  result.cache.stamp = model.stamp();
  const auto& layers = model.layers();
  Matrix x = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Matrix z = affine(x, layers[l]);
    result.cache.inputs.push_back(std::move(x));
    if (l + 1 == layers.size()) {
      result.embeddings = z;
    } else {
      x = z;
      relu_inplace(x);
    }
    result.cache.pre_activations.push_back(std::move(z));
  }
  return result;
}

Matrix mlp_embed(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.spec().input_dim) {
    fail(ErrorCode::kShapeMismatch, "input width does not match model input_dim");
  }
  const auto& layers = model.layers();
  Matrix x = inputs;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    x = affine(x, layers[l]);
    if (l + 1 < layers.size()) relu_inplace(x);
  }
  return x;
}

GradientSet mlp_backward(const MlpModel& model, const ForwardCache& cache,
                         const Matrix& grad_embeddings) {
  const auto& layers = model.layers();
  if (cache.stamp != model.stamp() || cache.inputs.size() != layers.size() ||
      cache.pre_activations.size() != layers.size()) {
    fail(ErrorCode::kStaleCache, "forward cache does not belong to the current parameters");
  }
  const std::size_t n = cache.inputs.front().rows();
  if (grad_embeddings.rows() != n || grad_embeddings.cols() != model.spec().embed_dim) {
    fail(ErrorCode::kShapeMismatch, "grad_embeddings shape does not match forward batch");
  }

  GradientSet grads;
  grads.layers.resize(layers.size());
  Matrix g = grad_embeddings;
  for (std::size_t l = layers.size(); l-- > 0;) {
    const DenseLayer& layer = layers[l];
    const Matrix& x = cache.inputs[l];
    const std::size_t n_in = layer.weight.cols();
    const std::size_t n_out = layer.weight.rows();
    DenseLayer& out = grads.layers[l];
    out.weight = Matrix(n_out, n_in);
    out.bias.assign(n_out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      const double* gr = g.row(r).data();
      const double* xr = x.row(r).data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const double go = gr[o];
        out.bias[o] += go;
        if (go == 0.0) continue;
        double* w = out.weight.row(o).data();
        for (std::size_t k = 0; k < n_in; ++k) w[k] += go * xr[k];
      }
    }
    if (l == 0) break;

    Matrix g_prev(n, n_in);
    const Matrix& z_prev = cache.pre_activations[l - 1];
    for (std::size_t r = 0; r < n; ++r) {
      const double* gr = g.row(r).data();
      double* dx = g_prev.row(r).data();
      for (std::size_t o = 0; o < n_out; ++o) {
        const double go = gr[o];
        if (go == 0.0) continue;
        const double* w = layer.weight.row(o).data();
        for (std::size_t k = 0; k < n_in; ++k) dx[k] += go * w[k];
      }
      const double* z = z_prev.row(r).data();
      for (std::size_t k = 0; k < n_in; ++k) {
        if (!(z[k] > 0.0)) dx[k] = 0.0;
      }
    }
    g = std::move(g_prev);
  }
  return grads;
}

ArcHead arc_head_init(std::size_t num_classes, std::size_t embed_dim, double scale,
                      double margin, std::uint64_t seed) {
  if (num_classes < 1 || embed_dim < 1) fail(ErrorCode::kInvalidParams, "empty arc head");
  if (!(scale > 0.0)) fail(ErrorCode::kInvalidParams, "arc scale must be > 0");
  if (!(margin >= 0.0 && margin < std::numbers::pi / 2)) {
    fail(ErrorCode::kInvalidParams, "arc margin must lie in [0, pi/2)");
  }
  Rng rng(seed);
  ArcHead head{Matrix(num_classes, embed_dim), scale, margin};
  for (std::size_t m = 0; m < num_classes; ++m) {
    auto row = head.class_weights.row(m);
    double norm = 0.0;
    do {
      for (double& w : row) w = rng.normal();
      norm = l2_norm(row);
    } while (!(norm > kNormEpsilon));
    for (double& w : row) w /= norm;
  }
  return head;
}

ArcFaceResult arcface_loss(const Matrix& embeddings, std::span<const Label> labels,
                           const ArcHead& head) {
  const std::size_t n = embeddings.rows();
  const std::size_t d = embeddings.cols();
  const std::size_t m = head.class_weights.rows();
  if (labels.size() != n) fail(ErrorCode::kShapeMismatch, "label count != batch size");
  if (head.class_weights.cols() != d) fail(ErrorCode::kShapeMismatch, "head width != embed dim");
  for (Label y : labels) {
    if (y >= m) fail(ErrorCode::kLabelOutOfRange, "label " + std::to_string(y) + " >= classes");
  }

  const double s = head.scale;
  const double cos_m = std::cos(head.margin);
  const double sin_m = std::sin(head.margin);
  // Past theta + m > pi the target logit continues linearly in cos(theta).
  const double threshold = std::cos(std::numbers::pi - head.margin);
  const double linear_offset = std::sin(std::numbers::pi - head.margin) * head.margin;

  Matrix w_hat(m, d);
  Vector w_norm(m);
  for (std::size_t j = 0; j < m; ++j) {
    w_norm[j] = l2_norm(head.class_weights.row(j));
    if (!(w_norm[j] > kNormEpsilon)) fail(ErrorCode::kZeroVector, "zero class weight row");
    for (std::size_t k = 0; k < d; ++k) w_hat(j, k) = head.class_weights(j, k) / w_norm[j];
  }

  ArcFaceResult res{0.0, Matrix(n, d), Matrix(m, d)};
  Vector logits(m), gcos(m);
  for (std::size_t i = 0; i < n; ++i) {
    auto x = embeddings.row(i);
    const double x_norm = l2_norm(x);
    if (!(x_norm > kNormEpsilon)) fail(ErrorCode::kZeroVector, "zero embedding row");
    Vector x_hat(d);
    for (std::size_t k = 0; k < d; ++k) x_hat[k] = x[k] / x_norm;

    const Label y = labels[i];
    Vector cosines(m);
    double target_slope = 1.0;
    for (std::size_t j = 0; j < m; ++j) {
      double c = std::clamp(dot(x_hat, w_hat.row(j)), -1.0, 1.0);
      cosines[j] = c;
      if (j == y && head.margin > 0.0) {
        if (c > threshold) {
          const double sin_t = std::sqrt(std::max(0.0, 1.0 - c * c));
          logits[j] = s * (c * cos_m - sin_t * sin_m);
          target_slope = cos_m + c * sin_m / std::max(sin_t, 1e-12);
        } else {
          logits[j] = s * (c - linear_offset);
        }
      } else {
        logits[j] = s * c;
      }
    }
    const double max_logit = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(logits[j] - max_logit);
    const double log_z = max_logit + std::log(z);
    res.loss += log_z - logits[y];

    // dL/dcos_j = (p_j - [j = y]) * s * dlogit_j/dcos_j / N
    for (std::size_t j = 0; j < m; ++j) {
      double p = std::exp(logits[j] - log_z);
      double g = p - (j == y ? 1.0 : 0.0);
      gcos[j] = g * s * (j == y ? target_slope : 1.0) / static_cast<double>(n);
    }

    // d cos_j / dx = (w_hat_j - cos_j x_hat) / |x|
    // d cos_j / dw_j = (x_hat - cos_j w_hat_j) / |w_j|
    auto gx = res.grad_embeddings.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const double g = gcos[j];
      if (g == 0.0) continue;
      auto wh = w_hat.row(j);
      auto gw = res.grad_class_weights.row(j);
      for (std::size_t k = 0; k < d; ++k) {
        gx[k] += g * (wh[k] - cosines[j] * x_hat[k]) / x_norm;
        gw[k] += g * (x_hat[k] - cosines[j] * wh[k]) / w_norm[j];
      }
    }
  }
  res.loss /= static_cast<double>(n);
  return res;
}

void sgd_update(std::span<double> params, std::span<const double> grads,
                std::span<double> velocity, double lr, double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    fail(ErrorCode::kShapeMismatch, "sgd_update: buffer sizes differ");
  }
  if (!(lr >= 0.0)) fail(ErrorCode::kInvalidParams, "learning rate must be >= 0");
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grads[i] + weight_decay * params[i];
    params[i] -= lr * velocity[i];
  }
}

void SgdOptimizer::step(MlpModel& model, const GradientSet& grads, double lr) {
  auto& layers = model.mutable_layers();
  if (grads.layers.size() != layers.size()) fail(ErrorCode::kShapeMismatch, "gradient layer count");
  if (model_velocity_.empty()) {
    for (const auto& l : layers) {
      model_velocity_.push_back({Matrix(l.weight.rows(), l.weight.cols()), Vector(l.bias.size(), 0.0)});
    }
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    sgd_update(layers[l].weight.flat(), grads.layers[l].weight.flat(),
               model_velocity_[l].weight.flat(), lr, momentum_, weight_decay_);
    sgd_update(layers[l].bias, grads.layers[l].bias, model_velocity_[l].bias, lr, momentum_,
               weight_decay_);
  }
}

void SgdOptimizer::step(ArcHead& head, const Matrix& grad_class_weights, double lr) {
  if (head_velocity_.empty()) {
    head_velocity_ = Matrix(head.class_weights.rows(), head.class_weights.cols());
  }
  sgd_update(head.class_weights.flat(), grad_class_weights.flat(), head_velocity_.flat(), lr,
             momentum_, weight_decay_);
}

void write_checkpoint(const std::filesystem::path& path, const MlpModel& model) {
  binary::Writer w;
  w.magic("CFMD");
  w.u32(kCheckpointFormatVersion);
  auto dims = model.spec().layer_dims();
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) w.u32(static_cast<std::uint32_t>(d));
  for (const auto& l : model.layers()) {
    for (double x : l.weight.flat()) w.f32(static_cast<float>(x));
    for (double x : l.bias) w.f32(static_cast<float>(x));
  }
  binary::write_file_atomic(path, w.bytes());
}

MlpModel read_checkpoint(const std::filesystem::path& path) {
  binary::Reader r(binary::read_file(path));
  r.expect_magic("CFMD");
  r.expect_version(kCheckpointFormatVersion);
  std::uint32_t count = r.u32();
  if (count < 2) fail(ErrorCode::kInvalidSpec, "checkpoint needs at least two dims");
  r.require(4ULL * count);
  std::vector<std::size_t> dims(count);
  for (auto& d : dims) d = r.u32();
  MlpSpec spec{dims.front(), std::vector<std::size_t>(dims.begin() + 1, dims.end() - 1),
               dims.back(), Activation::kRelu};
  spec.validate();
  std::uint64_t n_params = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) n_params += (dims[l] + 1) * dims[l + 1];
  r.require(4 * n_params);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    DenseLayer layer{Matrix(dims[l + 1], dims[l]), Vector(dims[l + 1])};
    for (double& x : layer.weight.flat()) x = r.f32();
    for (double& x : layer.bias) x = r.f32();
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(spec), std::move(layers));
}

}  // namespace coupleface
