#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "euat/nn.hpp"

namespace euat {

inline constexpr std::size_t kDefaultMcSamples = 20;

/// Class probabilities averaged over `sample_count` stochastic passes.
struct PredictiveDistribution {
  std::vector<double> probs;
  std::size_t sample_count = 1;
  std::optional<Tensor> per_sample_probs;  // [sample_count x classes]

  std::size_t class_count() const { return probs.size(); }
  std::size_t predicted_class() const;
  double confidence() const;
};

/// Everything one batched MC-dropout evaluation produces. Pass i uses the mask
/// seeded with derive_seed(seed, i).
struct McPasses {
  Tensor mean_probs;                 // [rows x classes]
  std::vector<Tensor> pass_probs;    // sample_count x [rows x classes]
  std::vector<ForwardCache> caches;  // one per pass; empty unless gradients were requested
  std::size_t sample_count = 0;

  PredictiveDistribution distribution(std::size_t row, bool with_samples = true) const;
};

McPasses mc_forward(const MlpModel& model, const Tensor& inputs, std::size_t samples,
                    std::uint64_t seed, bool keep_caches);

/// dL/d(mean_probs) -> parameter and input gradients, chained through every pass.
Gradients mc_backward(const MlpModel& model, const McPasses& passes, const Tensor& grad_mean_probs);

PredictiveDistribution mc_predict(const MlpModel& model, std::span<const double> input,
                                  std::size_t samples, std::uint64_t seed,
                                  bool keep_samples = false);

/// Evaluation-time batch prediction; per-sample records are dropped.
std::vector<PredictiveDistribution> mc_predict_batch(const MlpModel& model, const Tensor& inputs,
                                                     std::size_t samples, std::uint64_t seed);

/// Shannon entropy in nats, 0 ln 0 := 0, clamped to [0, ln K].
double predictive_entropy(std::span<const double> probs);
inline double predictive_entropy(const PredictiveDistribution& dist) {
  return predictive_entropy(dist.probs);
}

/// predictive_entropy / ln K, in [0, 1]. Throws for K < 2.
double normalized_entropy(std::span<const double> probs);
inline double normalized_entropy(const PredictiveDistribution& dist) {
  return normalized_entropy(dist.probs);
}

}  // namespace euat
