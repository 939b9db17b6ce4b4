#include "euat/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace euat {

namespace {
const double kLogClamp = std::log(kProbClamp);
}

LossTerm ce_loss(std::span<const double> probs, std::size_t label) {
  if (label >= probs.size()) throw std::invalid_argument("ce: label out of range");
  LossTerm out;
  out.grad.assign(probs.size(), 0.0);
  const double p = probs[label];
  if (p > kProbClamp) {
    out.value = -std::log(p);
    out.grad[label] = -1.0 / p;
  } else {
    out.value = -kLogClamp;
  }
  return out;
}

LossTerm entropy_term(std::span<const double> probs) {
  LossTerm out;
  out.grad.resize(probs.size());
  for (std::size_t c = 0; c < probs.size(); ++c) {
    const double p = probs[c];
    if (p > kProbClamp) {
      const double lp = std::log(p);
      out.value -= p * lp;
      out.grad[c] = -(lp + 1.0);
    } else {
      out.value -= p * kLogClamp;
      out.grad[c] = -kLogClamp;
    }
  }
  return out;
}

LossTerm ce_pe_loss(std::span<const double> probs, std::size_t label, double lambda) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("ce+pe: lambda must be non-negative");
  LossTerm out = ce_loss(probs, label);
  if (lambda == 0.0) return out;
  const LossTerm h = entropy_term(probs);
  out.value += lambda * h.value;
  for (std::size_t c = 0; c < probs.size(); ++c) out.grad[c] += lambda * h.grad[c];
  return out;
}

LossTerm euat_row_loss(std::span<const double> probs, std::size_t label, Membership membership) {
  const double sign = membership == Membership::wrong_set ? -1.0 : 1.0;
  LossTerm out = ce_loss(probs, label);
  const LossTerm h = entropy_term(probs);
  out.value += sign * h.value;
  for (std::size_t c = 0; c < probs.size(); ++c) out.grad[c] += sign * h.grad[c];
  return out;
}

BatchLoss batch_objective(const MlpModel& model, const Tensor& inputs, std::size_t samples,
                          std::uint64_t seed, const RowLoss& row_loss) {
  if (inputs.rows() == 0) throw std::invalid_argument("loss: empty batch");
  const McPasses passes = mc_forward(model, inputs, samples, seed, true);
  const std::size_t rows = inputs.rows();
  const double inv_rows = 1.0 / static_cast<double>(rows);
  Tensor grad_probs = Tensor::matrix(rows, model.class_count());
  BatchLoss out;
  for (std::size_t r = 0; r < rows; ++r) {
    const LossTerm term = row_loss(passes.mean_probs.row(r), r);
    out.value += term.value;
    for (std::size_t c = 0; c < term.grad.size(); ++c) grad_probs(r, c) = term.grad[c] * inv_rows;
  }
  out.value *= inv_rows;
  out.grads = mc_backward(model, passes, grad_probs);
  return out;
}

BatchLoss ce_batch_loss(const MlpModel& model, const LabeledBatch& batch, std::size_t samples,
                        std::uint64_t seed) {
  return batch_objective(model, batch.inputs, samples, seed,
                         [&](std::span<const double> probs, std::size_t r) {
                           return ce_loss(probs, batch.labels[r]);
                         });
}

BatchLoss ce_pe_batch_loss(const MlpModel& model, const LabeledBatch& batch, double lambda,
                           std::size_t samples, std::uint64_t seed) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("ce+pe: lambda must be non-negative");
  return batch_objective(model, batch.inputs, samples, seed,
                         [&](std::span<const double> probs, std::size_t r) {
                           return ce_pe_loss(probs, batch.labels[r], lambda);
                         });
}

BatchLoss euat_loss(const MlpModel& model, const LabeledBatch& batch, std::size_t samples,
                    std::uint64_t seed) {
  if (batch.membership.size() != batch.inputs.rows()) {
    throw std::invalid_argument("euat: every row needs a correct/wrong membership flag");
  }
  double wrong = 0.0;
  double correct = 0.0;
  BatchLoss out = batch_objective(
      model, batch.inputs, samples, seed, [&](std::span<const double> probs, std::size_t r) {
        LossTerm term = euat_row_loss(probs, batch.labels[r], batch.membership[r]);
        (batch.membership[r] == Membership::wrong_set ? wrong : correct) += term.value;
        return term;
      });
  const double inv_rows = 1.0 / static_cast<double>(batch.inputs.rows());
  out.wrong_part = wrong * inv_rows;
  out.correct_part = correct * inv_rows;
  return out;
}

}  // namespace euat
