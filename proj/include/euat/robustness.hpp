#pragma once

#include <cstdint>
#include <span>

#include "euat/dataset.hpp"
#include "euat/nn.hpp"
#include "euat/trainer.hpp"

namespace euat {

enum class AttackLoss { ce, euat };

struct AttackConfig {
  double epsilon = 4.0 / 255.0;  // L-infinity budget, input units
  double clip_min = 0.0;
  double clip_max = 1.0;
  AttackLoss loss = AttackLoss::ce;

  void validate() const;
};

/// One-step sign-gradient attack, gradient taken in evaluation mode:
///   x' = clip(x + epsilon * sign(dL/dx), clip_min, clip_max)
/// Every coordinate moves by at most epsilon, measured in floating point.
Tensor fgsm(const MlpModel& model, const Tensor& inputs, std::span<const std::size_t> labels,
            const AttackConfig& config);

/// The sign step alone: given dL/dx, move each coordinate by epsilon and clip.
Tensor sign_step(const Tensor& inputs, const Tensor& grad, const AttackConfig& config);

Dataset fgsm_dataset(const MlpModel& model, const Dataset& data, const AttackConfig& config);

/// A perturber that swaps every training batch for its FGSM version under the
/// current model; epsilon = 0 yields an empty perturber (plain training).
BatchPerturber fgsm_perturber(const AttackConfig& config);

struct CorruptionConfig {
  double sigma = 0.1;
  std::uint64_t seed = 0;
  double clip_min = 0.0;
  double clip_max = 1.0;
};

/// sigma * z, z standard normal per coordinate (row-major draw order).
Tensor gaussian_noise(std::size_t rows, std::size_t cols, double sigma, std::uint64_t seed);

/// x' = clip(x + noise); labels untouched.
Dataset gaussian_corrupt(const Dataset& data, const CorruptionConfig& config);

}  // namespace euat
