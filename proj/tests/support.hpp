#pragma once

// Shared fixtures and independent oracles for the test binaries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "euat/nn.hpp"
#include "euat/rng.hpp"
#include "euat/tensor.hpp"

namespace testing {

inline euat::Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                  double lo = 0.0, double hi = 1.0) {
  euat::CounterRng rng(seed);
  euat::Tensor t = euat::Tensor::matrix(rows, cols);
  for (auto& v : t.data()) v = lo + (hi - lo) * rng.next_uniform();
  return t;
}

/// He-initialised net with random (non-zero) biases, so relu units sit at
/// varied offsets and no parameter is special.
inline euat::MlpModel random_model(const std::vector<std::size_t>& widths, double dropout,
                                   std::uint64_t seed) {
  euat::MlpModel m = euat::MlpModel::initialize(widths, dropout, seed);
  euat::CounterRng rng(euat::derive_seed(seed, "bias"));
  for (auto& layer : m.mutable_layers()) {
    for (auto& b : layer.bias.data()) b = 0.2 * rng.next_normal();
  }
  return m;
}

/// Plain triple-loop forward pass in evaluation mode.
inline euat::Tensor naive_logits(const euat::MlpModel& model, const euat::Tensor& x) {
  std::vector<std::vector<double>> act(x.rows(), std::vector<double>(x.cols()));
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) act[r][c] = x(r, c);
  for (const auto& layer : model.layers()) {
    std::vector<std::vector<double>> next(x.rows(), std::vector<double>(layer.out_width()));
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t o = 0; o < layer.out_width(); ++o) {
        double s = layer.bias[o];
        for (std::size_t i = 0; i < layer.in_width(); ++i) s += layer.weights(o, i) * act[r][i];
        if (layer.activation == euat::Activation::relu) s = std::max(0.0, s);
        next[r][o] = s;
      }
    }
    act = std::move(next);
  }
  return euat::Tensor::from_rows(act);
}

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Largest relative error between `grads` and central differences of `loss`
/// over every weight and bias of `model`.
inline double max_param_fd_error(euat::MlpModel model, const euat::Gradients& grads,
                                 const std::function<double(const euat::MlpModel&)>& loss,
                                 double h = 1e-5) {
  double worst = 0.0;
  const std::size_t layers = model.layers().size();
  auto probe = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + h;
    const double up = loss(model);
    slot = saved - h;
    const double down = loss(model);
    slot = saved;
    worst = std::max(worst, relative_error(analytic, (up - down) / (2 * h)));
  };
  for (std::size_t l = 0; l < layers; ++l) {
    auto& layer = model.mutable_layers()[l];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      probe(model.mutable_layers()[l].weights[i], grads.weights[l][i]);
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      probe(model.mutable_layers()[l].bias[i], grads.bias[l][i]);
    }
  }
  return worst;
}

/// Same check for the gradient with respect to the inputs.
inline double max_input_fd_error(euat::Tensor inputs, const euat::Tensor& grad,
                                 const std::function<double(const euat::Tensor&)>& loss,
                                 double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double saved = inputs[i];
    inputs[i] = saved + h;
    const double up = loss(inputs);
    inputs[i] = saved - h;
    const double down = loss(inputs);
    inputs[i] = saved;
    worst = std::max(worst, relative_error(grad[i], (up - down) / (2 * h)));
  }
  return worst;
}

}  // namespace testing
