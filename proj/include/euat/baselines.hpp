#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "euat/dataset.hpp"
#include "euat/nn.hpp"
#include "euat/trainer.hpp"
#include "euat/uncertainty.hpp"

namespace euat {

// ---------------------------------------------------------------------------
// Isotonic top-label calibration

struct IsotonicMap {
  std::vector<double> breakpoints;  // ascending, distinct
  std::vector<double> levels;       // non-decreasing

  /// Linear interpolation between breakpoints, constant beyond the ends, clamped to [0, 1].
  double operator()(double confidence) const;
};

/// Pool-adjacent-violators least-squares fit of `targets` as a non-decreasing
/// function of `confidences`. Equal confidences are pooled first.
IsotonicMap isotonic_fit(std::span<const double> confidences, std::span<const double> targets);
IsotonicMap isotonic_fit(std::span<const double> confidences, const std::vector<bool>& correct);

/// Replaces the top-class probability with the calibrated value and rescales
/// the remaining mass proportionally. The calibrated value is floored so the
/// top class keeps its rank.
PredictiveDistribution isotonic_apply(const IsotonicMap& map, const PredictiveDistribution& dist);

nlohmann::json to_json(const IsotonicMap& map);
IsotonicMap isotonic_from_json(const nlohmann::json& doc);

// ---------------------------------------------------------------------------
// Deep ensemble

struct Ensemble {
  std::vector<MlpModel> members;
  std::vector<std::uint64_t> seeds;
};

struct EnsembleConfig {
  std::vector<std::size_t> widths;  // input, hidden..., classes
  double dropout_rate = 0.3;
  SupervisedConfig training;       // epochs = total budget before division
  std::size_t members = 5;
  bool split_budget = true;  // each member trains epochs / members
  SelectionMetric selection = SelectionMetric::uauc;
  std::size_t eval_mc_samples = kDefaultMcSamples;
};

struct EnsembleResult {
  Ensemble ensemble;
  std::vector<SupervisedResult> member_runs;
};

/// Member m initialises and shuffles from seeds[m].
EnsembleResult ensemble_train(const EnsembleConfig& config, const Dataset& train,
                              const Dataset* validation, std::span<const std::uint64_t> seeds,
                              const BatchPerturber& perturb = {});

/// Mean of the members' deterministic softmax outputs.
std::vector<PredictiveDistribution> ensemble_predict(const Ensemble& ensemble, const Tensor& inputs);

// ---------------------------------------------------------------------------
// Single-model baselines

SupervisedResult train_ce(const MlpModel& init, const Dataset& train, const Dataset& validation,
                          const TrainingSchedule& schedule, std::uint64_t seed,
                          const BatchPerturber& perturb = {});
SupervisedResult train_ce_pe(const MlpModel& init, const Dataset& train, const Dataset& validation,
                             const TrainingSchedule& schedule, double lambda, std::uint64_t seed,
                             const BatchPerturber& perturb = {});

/// Training config shared by the CE-family baselines: the whole pretrain +
/// EUAT epoch budget at the pre-training learning rate.
SupervisedConfig baseline_config(const TrainingSchedule& schedule);

}  // namespace euat
