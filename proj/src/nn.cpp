#include "euat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "euat/rng.hpp"

namespace euat {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

double activate(Activation a, double z) {
  return a == Activation::relu ? (z > 0.0 ? z : 0.0) : z;
}

double activation_slope(Activation a, double z) {
  return a == Activation::relu ? (z > 0.0 ? 1.0 : 0.0) : 1.0;
}

}  // namespace

MlpModel::MlpModel(std::vector<DenseLayer> layers, double dropout_rate)
    : layers_(std::move(layers)), dropout_rate_(dropout_rate) {
  require(!layers_.empty(), "mlp: at least one layer required");
  require(dropout_rate_ >= 0.0 && dropout_rate_ < 1.0, "mlp: dropout rate must lie in [0, 1)");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    require(layer.weights.rank() == 2 && layer.bias.rank() == 1 &&
                layer.bias.size() == layer.out_width(),
            "mlp: layer " + std::to_string(l) + " has inconsistent weight/bias shapes " +
                shape_string(layer.weights.shape()) + " / " + shape_string(layer.bias.shape()));
    if (l > 0) {
      require(layer.in_width() == layers_[l - 1].out_width(),
              "mlp: layer " + std::to_string(l) + " expects width " +
                  std::to_string(layer.in_width()) + " but previous layer emits " +
                  std::to_string(layers_[l - 1].out_width()));
    }
  }
}

MlpModel MlpModel::initialize(std::span<const std::size_t> widths, double dropout_rate,
                              std::uint64_t seed) {
  require(widths.size() >= 2, "mlp: need at least input and output widths");
  CounterRng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t in = widths[l];
    const std::size_t out = widths[l + 1];
    require(in > 0 && out > 0, "mlp: widths must be positive");
    const bool last = l + 2 == widths.size();
    const double stddev = std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(in));
    DenseLayer layer{Tensor::matrix(out, in), Tensor({out}), last ? Activation::identity
                                                                  : Activation::relu};
    for (double& w : layer.weights.data()) w = stddev * rng.next_normal();
    layers.push_back(std::move(layer));
  }
  return MlpModel(std::move(layers), dropout_rate);
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weights.size() + layer.bias.size();
  return n;
}

std::uint64_t MlpModel::checksum() const {
  std::uint64_t h = fnv1a64("mlp");
  for (const auto& layer : layers_) {
    h = fnv1a64(layer.weights.data().data(), layer.weights.size() * sizeof(double), h);
    h = fnv1a64(layer.bias.data().data(), layer.bias.size() * sizeof(double), h);
  }
  return h;
}

bool MlpModel::same_parameters(const MlpModel& other) const {
  if (layers_.size() != other.layers_.size() || dropout_rate_ != other.dropout_rate_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& a = layers_[l];
    const auto& b = other.layers_[l];
    if (a.activation != b.activation || a.weights.shape() != b.weights.shape()) return false;
    // Bitwise comparison: -0.0 vs 0.0 or NaN payloads count as different.
    if (std::memcmp(a.weights.data().data(), b.weights.data().data(),
                    a.weights.size() * sizeof(double)) != 0 ||
        std::memcmp(a.bias.data().data(), b.bias.data().data(), a.bias.size() * sizeof(double)) !=
            0) {
      return false;
    }
  }
  return true;
}

DropoutMask sample_mask(const MlpModel& model, std::size_t rows, std::uint64_t seed) {
  const double p = model.dropout_rate();
  require(p < 1.0, "dropout: rate must be below 1");
  const double scale = 1.0 / (1.0 - p);
  DropoutMask mask;
  mask.seed = seed;
  for (std::size_t l = 0; l < model.hidden_layer_count(); ++l) {
    mask.keep.emplace_back(Tensor::matrix(rows, model.layers()[l].out_width()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint64_t row_key = derive_seed(seed, static_cast<std::uint64_t>(r));
    std::uint64_t counter = 0;
    for (auto& keep : mask.keep) {
      for (std::size_t j = 0; j < keep.cols(); ++j) {
        const double u = CounterRng::uniform_at(row_key, ++counter);
        keep(r, j) = u >= p ? scale : 0.0;
      }
    }
  }
  return mask;
}

ForwardResult forward(const MlpModel& model, const Tensor& batch, const DropoutMask* mask) {
  require(batch.rank() == 2 && batch.cols() == model.input_width(),
          "forward: batch shape " + shape_string(batch.shape()) + " does not match input width " +
              std::to_string(model.input_width()));
  const auto& layers = model.layers();
  const std::size_t rows = batch.rows();
  if (mask) {
    require(mask->keep.size() == model.hidden_layer_count(),
            "forward: mask has " + std::to_string(mask->keep.size()) + " layers, model has " +
                std::to_string(model.hidden_layer_count()) + " hidden layers");
    for (std::size_t l = 0; l < mask->keep.size(); ++l) {
      const std::vector<std::size_t> want{rows, layers[l].out_width()};
      require(mask->keep[l].shape() == want,
              "forward: mask layer " + std::to_string(l) + " has shape " +
                  shape_string(mask->keep[l].shape()) + ", expected " + shape_string(want));
    }
  }

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.model_version = model.version();
  if (mask) cache.masks = mask->keep;

  Tensor activations = batch;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    const std::size_t in = layer.in_width();
    const std::size_t out = layer.out_width();
    Tensor z = Tensor::matrix(rows, out);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* x = activations.data().data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = layer.weights.data().data() + o * in;
        double acc = layer.bias[o];
        for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
        z(r, o) = acc;
      }
    }
    Tensor next = z;
    for (double& v : next.data()) v = activate(layer.activation, v);
    if (mask && l < mask->keep.size()) {
      const auto& keep = mask->keep[l].data();
      for (std::size_t k = 0; k < next.size(); ++k) next[k] *= keep[k];
    }
    cache.layer_inputs.push_back(std::move(activations));
    cache.pre_activations.push_back(std::move(z));
    activations = std::move(next);
  }
  result.logits = std::move(activations);
  return result;
}

Tensor predict_logits(const MlpModel& model, const Tensor& batch, const DropoutMask* mask) {
  return forward(model, batch, mask).logits;
}

Tensor softmax(const Tensor& logits) {
  Tensor probs = logits;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return probs;
}

Gradients Gradients::zeros_like(const MlpModel& model) {
  Gradients g;
  for (const auto& layer : model.layers()) {
    g.weights.emplace_back(layer.weights.shape());
    g.bias.emplace_back(layer.bias.shape());
  }
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  if (weights.empty()) {
    *this = other;
    return;
  }
  require(weights.size() == other.weights.size(), "gradients: layer count mismatch");
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (std::size_t k = 0; k < weights[l].size(); ++k) weights[l][k] += other.weights[l][k];
    for (std::size_t k = 0; k < bias[l].size(); ++k) bias[l][k] += other.bias[l][k];
  }
  if (input.empty()) {
    input = other.input;
  } else if (!other.input.empty()) {
    require(input.shape() == other.input.shape(), "gradients: input shape mismatch");
    for (std::size_t k = 0; k < input.size(); ++k) input[k] += other.input[k];
  }
}

void Gradients::scale(double factor) {
  for (auto& t : weights)
    for (double& v : t.data()) v *= factor;
  for (auto& t : bias)
    for (double& v : t.data()) v *= factor;
  for (double& v : input.data()) v *= factor;
}

bool Gradients::all_finite() const {
  for (const auto& t : weights)
    if (!t.all_finite()) return false;
  for (const auto& t : bias)
    if (!t.all_finite()) return false;
  return input.all_finite();
}

Gradients backward(const MlpModel& model, const ForwardCache& cache, const Tensor& upstream) {
  const auto& layers = model.layers();
  if (cache.model_version != model.version() || cache.layer_inputs.size() != layers.size() ||
      cache.pre_activations.size() != layers.size()) {
    throw std::invalid_argument("backward: forward cache is stale or belongs to another model");
  }
  const std::size_t rows = cache.layer_inputs.front().rows();
  require(upstream.rank() == 2 && upstream.rows() == rows &&
              upstream.cols() == model.class_count(),
          "backward: upstream gradient shape " + shape_string(upstream.shape()) +
              " does not match logits");

  Gradients grads = Gradients::zeros_like(model);
  Tensor delta = upstream;  // dL/d(output of layer l)
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& layer = layers[l];
    const std::size_t in = layer.in_width();
    const std::size_t out = layer.out_width();
    const Tensor& z = cache.pre_activations[l];
    const Tensor& x = cache.layer_inputs[l];
    if (l < cache.masks.size()) {
      const auto& keep = cache.masks[l].data();
      for (std::size_t k = 0; k < delta.size(); ++k) delta[k] *= keep[k];
    }
    for (std::size_t k = 0; k < delta.size(); ++k) delta[k] *= activation_slope(layer.activation, z[k]);

    Tensor& dw = grads.weights[l];
    Tensor& db = grads.bias[l];
    Tensor prev = Tensor::matrix(rows, in);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* xr = x.data().data() + r * in;
      double* pr = prev.data().data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        db[o] += d;
        double* dwo = dw.data().data() + o * in;
        const double* wo = layer.weights.data().data() + o * in;
        for (std::size_t i = 0; i < in; ++i) {
          dwo[i] += d * xr[i];
          pr[i] += d * wo[i];
        }
      }
    }
    delta = std::move(prev);
  }
  grads.input = std::move(delta);
  return grads;
}

OptimizerState OptimizerState::for_model(const MlpModel& model, double lr, double momentum,
                                         double weight_decay) {
  require(lr >= 0.0, "sgd: learning rate must be non-negative");
  require(momentum >= 0.0 && momentum < 1.0, "sgd: momentum must lie in [0, 1)");
  require(weight_decay >= 0.0, "sgd: weight decay must be non-negative");
  OptimizerState state;
  state.lr = lr;
  state.momentum = momentum;
  state.weight_decay = weight_decay;
  for (const auto& layer : model.layers()) {
    state.weight_velocity.emplace_back(layer.weights.shape());
    state.bias_velocity.emplace_back(layer.bias.shape());
  }
  return state;
}

StepStatus sgd_step(MlpModel& model, const Gradients& grads, OptimizerState& state) {
  const auto& layers = model.layers();
  require(grads.weights.size() == layers.size() && state.weight_velocity.size() == layers.size(),
          "sgd: gradient/state layer count does not match model");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(grads.weights[l].shape() == layers[l].weights.shape() &&
                grads.bias[l].shape() == layers[l].bias.shape() &&
                state.weight_velocity[l].shape() == layers[l].weights.shape() &&
                state.bias_velocity[l].shape() == layers[l].bias.shape(),
            "sgd: shape mismatch at layer " + std::to_string(l));
    if (!grads.weights[l].all_finite() || !grads.bias[l].all_finite()) {
      return StepStatus::rejected_non_finite;
    }
  }
  auto update = [&](Tensor& param, const Tensor& grad, Tensor& velocity) {
    for (std::size_t k = 0; k < param.size(); ++k) {
      velocity[k] = state.momentum * velocity[k] + grad[k] + state.weight_decay * param[k];
      param[k] -= state.lr * velocity[k];
    }
  };
  auto& mutable_layers = model.mutable_layers();
  for (std::size_t l = 0; l < mutable_layers.size(); ++l) {
    update(mutable_layers[l].weights, grads.weights[l], state.weight_velocity[l]);
    update(mutable_layers[l].bias, grads.bias[l], state.bias_velocity[l]);
  }
  return StepStatus::applied;
}

}  // namespace euat
