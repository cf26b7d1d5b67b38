#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlab/rng.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

enum class LayerKind { dense, conv2d, maxpool2d, relu, flatten };
enum class Padding { valid, same };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

/// Static configuration of one layer. Unused fields stay zero.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  Index in_features = 0;
  Index out_features = 0;
  Index in_channels = 0;
  Index out_channels = 0;
  Index kernel = 0;
  Padding padding = Padding::valid;
  Index pool = 0;

  static LayerSpec dense(Index in, Index out);
  static LayerSpec conv2d(Index in_channels, Index out_channels, Index kernel, Padding padding);
  static LayerSpec maxpool2d(Index size);
  static LayerSpec relu();
  static LayerSpec flatten();

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A trainable tensor together with its gradient and momentum buffer.
template <typename Scalar>
struct Param {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  Tensor<Scalar> velocity;

  explicit Param(Shape shape) : value(shape), grad(shape), velocity(shape) {}
};

template <typename Scalar>
struct Layer {
  LayerSpec spec;
  Shape in_shape;   // per sample
  Shape out_shape;  // per sample
  std::vector<Param<Scalar>> params;  // dense/conv2d: {weight, bias}
};

template <typename Scalar>
struct ForwardResult {
  Tensor<Scalar> logits;      // [B, C]
  Tensor<Scalar> embeddings;  // [B, d]
};

/// Ordered layer stack. Copyable value type; a copy is an independent snapshot.
///
/// Evaluation through `forward` is read-only and may run concurrently on a
/// shared instance. `forward_record`, `backward` and `sgd_step` mutate the
/// network and must be serialized by the caller.
template <typename Scalar>
class Network {
 public:
  Network() = default;

  /// Validates that the layer chain composes for `input_shape` (per sample).
  /// `embedding_tap` is the index of the layer whose output is the embedding.
  Network(Shape input_shape, const std::vector<LayerSpec>& specs, Index embedding_tap);

  /// Fan-in scaled uniform weights, zero biases.
  void init(Rng& rng);

  const Shape& input_shape() const noexcept { return input_shape_; }
  Index num_classes() const;
  Index embedding_dim() const;
  Index embedding_tap() const noexcept { return embedding_tap_; }
  std::vector<Layer<Scalar>>& layers() noexcept { return layers_; }
  const std::vector<Layer<Scalar>>& layers() const noexcept { return layers_; }
  std::vector<LayerSpec> specs() const;

  /// Per-channel (x - mean) / std applied ahead of the first layer. Empty
  /// vectors disable it.
  void set_input_normalization(Vector<Scalar> mean, Vector<Scalar> stddev);
  const Vector<Scalar>& input_mean() const noexcept { return input_mean_; }
  const Vector<Scalar>& input_std() const noexcept { return input_std_; }

  Index parameter_count() const;
  /// All parameter values concatenated in layer order.
  Vector<Scalar> parameters() const;
  void set_parameters(const Vector<Scalar>& flat);
  Vector<Scalar> gradients() const;

  template <typename Other>
  Network<Other> cast() const;

  // Recorded activations of the last forward_record call.
  struct Tape {
    Tensor<Scalar> input;  // normalized network input
    std::vector<Tensor<Scalar>> layer_inputs;
    std::vector<std::vector<Index>> pool_argmax;
  };
  const std::optional<Tape>& tape() const noexcept { return tape_; }
  std::optional<Tape>& tape() noexcept { return tape_; }

 private:
  Shape input_shape_;
  std::vector<Layer<Scalar>> layers_;
  Index embedding_tap_ = 0;
  Vector<Scalar> input_mean_;
  Vector<Scalar> input_std_;
  std::optional<Tape> tape_;
};

using NetworkF = Network<float>;
using NetworkD = Network<double>;

/// Pure evaluation. Batch shape must be [B, input_shape...].
template <typename Scalar>
ForwardResult<Scalar> forward(const Network<Scalar>& net, const Tensor<Scalar>& batch);

/// Evaluation that records what `backward` needs.
template <typename Scalar>
ForwardResult<Scalar> forward_record(Network<Scalar>& net, const Tensor<Scalar>& batch);

/// Overwrites every gradient slot with dLoss/dParam for the recorded batch.
template <typename Scalar>
void backward(Network<Scalar>& net, const Tensor<Scalar>& grad_logits);

struct SgdOptions {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

/// v <- momentum * v + grad;  param <- param - lr * (v + weight_decay * param).
template <typename Scalar>
void sgd_step(Network<Scalar>& net, const SgdOptions& options);

/// Desk-scale architecture families.
struct ArchSpec {
  std::string kind = "cnn";  // cnn | lenet | mlp | linear
  Index conv1 = 8;
  Index conv2 = 16;
  Index hidden = 32;
  bool normalize_input = true;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// Builds (uninitialized) a network for inputs of shape [channels, H, W].
template <typename Scalar>
Network<Scalar> build_network(const ArchSpec& arch, const Shape& input_shape, Index num_classes);

// ---------------------------------------------------------------------------

template <typename Scalar>
template <typename Other>
Network<Other> Network<Scalar>::cast() const {
  Network<Other> out(input_shape_, specs(), embedding_tap_);
  out.set_parameters(parameters().template cast<Other>());
  if (input_mean_.size() > 0) {
    out.set_input_normalization(input_mean_.template cast<Other>(), input_std_.template cast<Other>());
  }
  return out;
}

}  // namespace dlab
