#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "euat/tensor.hpp"

namespace euat {

enum class Activation { relu, identity };

struct DenseLayer {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]
  Activation activation = Activation::relu;

  std::size_t in_width() const { return weights.cols(); }
  std::size_t out_width() const { return weights.rows(); }
};

/// Feed-forward stack. Dropout follows every layer except the last, whose
/// outputs are the class logits.
class MlpModel {
 public:
  MlpModel() = default;
  MlpModel(std::vector<DenseLayer> layers, double dropout_rate);

  /// He-normal weights, zero biases; relu hidden layers and identity logits.
  /// `widths` = {input, hidden..., classes}.
  static MlpModel initialize(std::span<const std::size_t> widths, double dropout_rate,
                             std::uint64_t seed);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Mutable access invalidates outstanding forward caches.
  std::vector<DenseLayer>& mutable_layers() {
    ++version_;
    return layers_;
  }

  double dropout_rate() const { return dropout_rate_; }
  std::size_t input_width() const { return layers_.front().in_width(); }
  std::size_t class_count() const { return layers_.back().out_width(); }
  std::size_t hidden_layer_count() const { return layers_.size() - 1; }
  std::size_t parameter_count() const;
  std::uint64_t version() const { return version_; }

  /// FNV-1a over the raw parameter bytes; equal checksums for bit-identical parameters.
  std::uint64_t checksum() const;
  bool same_parameters(const MlpModel& other) const;

 private:
  std::vector<DenseLayer> layers_;
  double dropout_rate_ = 0.0;
  std::uint64_t version_ = 0;
};

/// Inverted-dropout keep masks, one [rows x width] tensor per hidden layer.
/// Entries are 0 or 1/(1-p).
struct DropoutMask {
  std::vector<Tensor> keep;
  std::uint64_t seed = 0;
};

/// Row r of the mask draws from the substream derive_seed(seed, r), so a row's
/// mask does not depend on how many other rows share the batch.
DropoutMask sample_mask(const MlpModel& model, std::size_t rows, std::uint64_t seed);

struct ForwardCache {
  std::vector<Tensor> layer_inputs;  // input to each layer (after the previous dropout)
  std::vector<Tensor> pre_activations;
  std::vector<Tensor> masks;  // empty in evaluation mode
  std::uint64_t model_version = 0;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

/// With `mask == nullptr` the pass is deterministic evaluation mode.
ForwardResult forward(const MlpModel& model, const Tensor& batch, const DropoutMask* mask = nullptr);
Tensor predict_logits(const MlpModel& model, const Tensor& batch, const DropoutMask* mask = nullptr);

Tensor softmax(const Tensor& logits);

struct Gradients {
  std::vector<Tensor> weights;
  std::vector<Tensor> bias;
  Tensor input;

  static Gradients zeros_like(const MlpModel& model);
  void accumulate(const Gradients& other);
  void scale(double factor);
  bool all_finite() const;
};

/// `upstream` is dL/dlogits, shaped like the logits of the cached pass.
Gradients backward(const MlpModel& model, const ForwardCache& cache, const Tensor& upstream);

struct OptimizerState {
  std::vector<Tensor> weight_velocity;
  std::vector<Tensor> bias_velocity;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;

  static OptimizerState for_model(const MlpModel& model, double lr, double momentum,
                                  double weight_decay);
};

enum class StepStatus { applied, rejected_non_finite };

/// v <- momentum * v + grad + weight_decay * param;  param <- param - lr * v.
/// Non-finite gradients leave both the model and the state untouched.
[[nodiscard]] StepStatus sgd_step(MlpModel& model, const Gradients& grads, OptimizerState& state);

}  // namespace euat
