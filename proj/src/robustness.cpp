#include "euat/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "euat/losses.hpp"
#include "euat/rng.hpp"

namespace euat {

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("fgsm: epsilon must be non-negative");
  if (!(clip_min < clip_max)) throw std::invalid_argument("fgsm: clip_min must be below clip_max");
}

Tensor fgsm(const MlpModel& model, const Tensor& inputs, std::span<const std::size_t> labels,
            const AttackConfig& config) {
  config.validate();
  if (inputs.rows() != labels.size()) throw std::invalid_argument("fgsm: label count mismatch");
  if (config.epsilon == 0.0 || inputs.rows() == 0) return inputs;

  const auto pass = forward(model, inputs);
  const Tensor probs = softmax(pass.logits);
  const std::size_t classes = probs.cols();
  Tensor upstream = Tensor::matrix(inputs.rows(), classes);
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const auto p = probs.row(r);
    LossTerm term;
    if (config.loss == AttackLoss::ce) {
      term = ce_loss(p, labels[r]);
    } else {
      const std::size_t predicted =
          static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      term = euat_row_loss(p, labels[r],
                           predicted == labels[r] ? Membership::correct_set : Membership::wrong_set);
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < classes; ++c) dot += term.grad[c] * p[c];
    for (std::size_t c = 0; c < classes; ++c) upstream(r, c) = p[c] * (term.grad[c] - dot);
  }
  return sign_step(inputs, backward(model, pass.cache, upstream).input, config);
}

Tensor sign_step(const Tensor& inputs, const Tensor& grad, const AttackConfig& config) {
  config.validate();
  if (grad.shape() != inputs.shape()) throw std::invalid_argument("fgsm: gradient shape mismatch");
  if (config.epsilon == 0.0) return inputs;
  Tensor out = inputs;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double x = inputs[k];
    const double g = grad[k];
    if (g == 0.0) continue;
    double moved = g > 0.0 ? x + config.epsilon : x - config.epsilon;
    // Rounding of x +/- epsilon may overshoot the budget by an ulp.
    while (std::abs(moved - x) > config.epsilon) moved = std::nextafter(moved, x);
    out[k] = std::clamp(moved, config.clip_min, config.clip_max);
  }
  return out;
}

Dataset fgsm_dataset(const MlpModel& model, const Dataset& data, const AttackConfig& config) {
  Dataset out = data;
  out.inputs = fgsm(model, data.inputs, data.labels, config);
  out.provenance += ";fgsm:epsilon=" + std::to_string(config.epsilon);
  return out;
}

BatchPerturber fgsm_perturber(const AttackConfig& config) {
  config.validate();
  if (config.epsilon == 0.0) return {};
  return [config](const MlpModel& model, const Tensor& inputs, std::span<const std::size_t> labels) {
    return fgsm(model, inputs, labels, config);
  };
}

Tensor gaussian_noise(std::size_t rows, std::size_t cols, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw std::invalid_argument("corruption: sigma must be non-negative");
  Tensor noise = Tensor::matrix(rows, cols);
  CounterRng rng(seed);
  for (double& v : noise.data()) v = sigma * rng.next_normal();
  return noise;
}

Dataset gaussian_corrupt(const Dataset& data, const CorruptionConfig& config) {
  if (!(config.sigma >= 0.0)) throw std::invalid_argument("corruption: sigma must be non-negative");
  Dataset out = data;
  out.provenance += ";gaussian:sigma=" + std::to_string(config.sigma) +
                    ";seed=" + std::to_string(config.seed);
  if (config.sigma == 0.0) return out;
  const Tensor noise = gaussian_noise(data.inputs.rows(), data.inputs.cols(), config.sigma, config.seed);
  for (std::size_t k = 0; k < out.inputs.size(); ++k) {
    out.inputs[k] = std::clamp(data.inputs[k] + noise[k], config.clip_min, config.clip_max);
  }
  return out;
}

}  // namespace euat
