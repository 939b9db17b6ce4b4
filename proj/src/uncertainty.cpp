#include "euat/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "euat/rng.hpp"

namespace euat {

std::size_t PredictiveDistribution::predicted_class() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

double PredictiveDistribution::confidence() const {
  return *std::max_element(probs.begin(), probs.end());
}

PredictiveDistribution McPasses::distribution(std::size_t row, bool with_samples) const {
  PredictiveDistribution dist;
  const auto mean = mean_probs.row(row);
  dist.probs.assign(mean.begin(), mean.end());
  dist.sample_count = sample_count;
  if (with_samples) {
    Tensor samples = Tensor::matrix(sample_count, mean_probs.cols());
    for (std::size_t i = 0; i < sample_count; ++i) {
      const auto src = pass_probs[i].row(row);
      std::copy(src.begin(), src.end(), samples.row(i).begin());
    }
    dist.per_sample_probs = std::move(samples);
  }
  return dist;
}

McPasses mc_forward(const MlpModel& model, const Tensor& inputs, std::size_t samples,
                    std::uint64_t seed, bool keep_caches) {
  if (samples == 0) throw std::invalid_argument("mc: sample count must be at least 1");
  McPasses out;
  out.sample_count = samples;

  if (model.dropout_rate() == 0.0) {
    // Every mask is all-ones; one deterministic pass stands in for all of them.
    auto result = forward(model, inputs);
    Tensor probs = softmax(result.logits);
    out.mean_probs = probs;
    out.pass_probs.assign(samples, probs);
    if (keep_caches) out.caches.assign(samples, result.cache);
    return out;
  }

  out.mean_probs = Tensor::matrix(inputs.rows(), model.class_count());
  for (std::size_t i = 0; i < samples; ++i) {
    const DropoutMask mask = sample_mask(model, inputs.rows(), derive_seed(seed, i));
    auto result = forward(model, inputs, &mask);
    Tensor probs = softmax(result.logits);
    for (std::size_t k = 0; k < probs.size(); ++k) out.mean_probs[k] += probs[k];
    out.pass_probs.push_back(std::move(probs));
    if (keep_caches) out.caches.push_back(std::move(result.cache));
  }
  const double inv = 1.0 / static_cast<double>(samples);
  for (double& v : out.mean_probs.data()) v *= inv;
  return out;
}

Gradients mc_backward(const MlpModel& model, const McPasses& passes, const Tensor& grad_mean_probs) {
  if (passes.caches.size() != passes.sample_count) {
    throw std::invalid_argument("mc: per-pass records were not kept; gradients unavailable");
  }
  if (grad_mean_probs.shape() != passes.mean_probs.shape()) {
    throw std::invalid_argument("mc: gradient shape " + shape_string(grad_mean_probs.shape()) +
                                " does not match predictions " +
                                shape_string(passes.mean_probs.shape()));
  }
  const double inv = 1.0 / static_cast<double>(passes.sample_count);
  const std::size_t rows = grad_mean_probs.rows();
  const std::size_t classes = grad_mean_probs.cols();
  Gradients total;
  for (std::size_t i = 0; i < passes.sample_count; ++i) {
    const Tensor& p = passes.pass_probs[i];
    // Softmax Jacobian-vector product: dz = p * (g - <g, p>).
    Tensor upstream = Tensor::matrix(rows, classes);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < classes; ++c) dot += grad_mean_probs(r, c) * p(r, c);
      for (std::size_t c = 0; c < classes; ++c) {
        upstream(r, c) = inv * p(r, c) * (grad_mean_probs(r, c) - dot);
      }
    }
    total.accumulate(backward(model, passes.caches[i], upstream));
  }
  return total;
}

PredictiveDistribution mc_predict(const MlpModel& model, std::span<const double> input,
                                  std::size_t samples, std::uint64_t seed, bool keep_samples) {
  Tensor batch({1, input.size()}, std::vector<double>(input.begin(), input.end()));
  return mc_forward(model, batch, samples, seed, false).distribution(0, keep_samples);
}

std::vector<PredictiveDistribution> mc_predict_batch(const MlpModel& model, const Tensor& inputs,
                                                     std::size_t samples, std::uint64_t seed) {
  const McPasses passes = mc_forward(model, inputs, samples, seed, false);
  std::vector<PredictiveDistribution> out;
  out.reserve(inputs.rows());
  for (std::size_t r = 0; r < inputs.rows(); ++r) out.push_back(passes.distribution(r, false));
  return out;
}

double predictive_entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  const double upper = std::log(static_cast<double>(probs.size()));
  return std::clamp(h, 0.0, upper);
}

double normalized_entropy(std::span<const double> probs) {
  if (probs.size() < 2) throw std::invalid_argument("entropy: normalization needs at least 2 classes");
  return predictive_entropy(probs) / std::log(static_cast<double>(probs.size()));
}

}  // namespace euat
