#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "euat/nn.hpp"
#include "euat/uncertainty.hpp"

namespace euat {

/// Lower clamp applied to every probability inside a logarithm.
inline constexpr double kProbClamp = 1e-12;

/// A scalar loss and its gradient with respect to the (MC-averaged) probabilities.
struct LossTerm {
  double value = 0.0;
  std::vector<double> grad;
};

/// -ln p_label.
LossTerm ce_loss(std::span<const double> probs, std::size_t label);
/// Predictive entropy in nats, differentiable everywhere on the clamped simplex.
LossTerm entropy_term(std::span<const double> probs);
/// CE + lambda * entropy; lambda must be non-negative.
LossTerm ce_pe_loss(std::span<const double> probs, std::size_t label, double lambda);

enum class Membership : std::uint8_t { correct_set, wrong_set };

/// CE - H for mispredicted rows, CE + H for correctly predicted rows.
LossTerm euat_row_loss(std::span<const double> probs, std::size_t label, Membership membership);

struct LabeledBatch {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::vector<Membership> membership;  // empty for non-EUAT batches
  std::vector<std::size_t> ids;        // source row ids, for bookkeeping
};

struct BatchLoss {
  double value = 0.0;  // mean over rows
  double wrong_part = 0.0;    // sum over wrong rows / rows
  double correct_part = 0.0;  // sum over correct rows / rows
  Gradients grads;
};

using RowLoss = std::function<LossTerm(std::span<const double> probs, std::size_t row)>;

/// Mean of `row_loss` over the batch, with parameter gradients chained
/// through all `samples` MC-dropout passes.
BatchLoss batch_objective(const MlpModel& model, const Tensor& inputs, std::size_t samples,
                          std::uint64_t seed, const RowLoss& row_loss);

BatchLoss ce_batch_loss(const MlpModel& model, const LabeledBatch& batch, std::size_t samples,
                        std::uint64_t seed);
BatchLoss ce_pe_batch_loss(const MlpModel& model, const LabeledBatch& batch, double lambda,
                           std::size_t samples, std::uint64_t seed);
BatchLoss euat_loss(const MlpModel& model, const LabeledBatch& batch, std::size_t samples,
                    std::uint64_t seed);

}  // namespace euat
