#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "euat/dataset.hpp"
#include "euat/losses.hpp"
#include "euat/metrics.hpp"
#include "euat/nn.hpp"

namespace euat {

enum class SelectionMetric { ua, uauc, corr, wasserstein, error };

SelectionMetric parse_selection_metric(const std::string& name);
std::string to_string(SelectionMetric metric);

struct TrainingSchedule {
  std::size_t pretrain_epochs = 30;
  std::size_t euat_epochs = 30;
  double pretrain_lr = 0.1;
  double euat_lr = 0.1 / 1000.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  SelectionMetric selection = SelectionMetric::uauc;
  std::size_t train_mc_samples = kDefaultMcSamples;  // passes per EUAT batch
  std::size_t eval_mc_samples = kDefaultMcSamples;
  std::size_t max_consecutive_skips = 3;

  /// Throws std::invalid_argument on an odd batch size or bad rates.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Evaluation

std::vector<EvalRecord> evaluate_records(const MlpModel& model, const Dataset& data,
                                         std::size_t samples, std::uint64_t seed);

struct ValidationSummary {
  MetricsReport metrics;  // at the threshold tuned on the same records
  double selection_value = 0.0;
};

ValidationSummary summarize_validation(std::span<const EvalRecord> records, SelectionMetric metric);

/// Larger is better. Undefined metrics map to -infinity; error is negated.
double selection_value(const MetricsReport& metrics, SelectionMetric metric);

struct EpochReport {
  std::size_t epoch = 0;
  std::string phase;  // "pretrain", "ce", "ce_pe", "euat", ...
  double train_loss = 0.0;
  double train_error = 0.0;
  double validation_error = 0.0;
  double ua = 0.0;
  std::optional<double> uauc;
  double ece = 0.0;
  std::optional<double> wasserstein;
  std::optional<double> corr;
  double selection_value = 0.0;
  std::size_t correct_count = 0;  // EUAT partition sizes
  std::size_t wrong_count = 0;
  bool skipped = false;
  double wall_seconds = 0.0;
};

/// Header + one row per report. `with_timing = false` drops the wall-time column.
std::string epoch_report_csv(std::span<const EpochReport> reports, bool with_timing = true);

// ---------------------------------------------------------------------------
// Algorithm building blocks

struct PartitionedTrainSet {
  std::vector<std::size_t> correct;
  std::vector<std::size_t> wrong;
  std::size_t epoch = 0;
};

/// Deterministic evaluation-mode argmax against the labels.
PartitionedTrainSet partition(const MlpModel& model, const Tensor& inputs,
                              std::span<const std::size_t> labels, std::size_t epoch = 0);

/// Largest-remainder per-class quotas; within a class, a seeded random choice.
/// The result keeps the relative order of `ids`. A target above |ids| returns
/// `ids` unchanged.
std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> ids,
                                              std::size_t target_size,
                                              std::span<const std::size_t> labels,
                                              std::uint64_t seed);

/// Per-class quotas summing to target (largest remainder, ties to lower class).
std::vector<std::size_t> apportion(std::span<const std::size_t> class_sizes, std::size_t target);

/// Batches holding batch_size/2 rows from each set (ragged tail keeps the
/// remainder of each), rows shuffled within a batch and tagged with membership.
std::vector<LabeledBatch> balanced_batches(const Tensor& inputs, std::span<const std::size_t> labels,
                                           std::span<const std::size_t> correct_subset,
                                           std::span<const std::size_t> wrong_set,
                                           std::size_t batch_size, std::uint64_t seed);

bool stop_condition(std::size_t epoch, std::size_t epoch_budget, std::size_t skip_counter,
                    std::size_t max_skips = 3);

// ---------------------------------------------------------------------------
// Training loops

/// Replaces a batch's inputs before each update (adversarial training).
using BatchPerturber = std::function<Tensor(const MlpModel& model, const Tensor& inputs,
                                            std::span<const std::size_t> labels)>;

struct TrainObserver {
  std::function<void(const PartitionedTrainSet&)> on_partition;
  std::function<void(const LabeledBatch&)> on_batch;
};

enum class SupervisedLoss { ce, ce_pe };

struct SupervisedConfig {
  std::size_t epochs = 30;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch_size = 64;
  SupervisedLoss loss = SupervisedLoss::ce;
  double lambda = 1.0;        // ce_pe weight
  std::size_t mc_samples = 1;  // stochastic passes per training batch
  std::string phase = "ce";
};

struct SupervisedResult {
  MlpModel model;  // the selected checkpoint when validating, else the last
  std::vector<double> loss_trajectory;  // mean training loss per epoch
  std::vector<EpochReport> epochs;      // filled when validating
  std::optional<std::size_t> best_epoch;
  bool diverged = false;
};

/// Minibatch SGD on CE or CE+PE. With a validation set, every epoch's model is
/// scored and the best one is returned. Divergence stops training and keeps
/// the last finite model.
SupervisedResult supervised_train(MlpModel model, const Dataset& train, const Dataset* validation,
                                  const SupervisedConfig& config, SelectionMetric selection,
                                  std::size_t eval_samples, std::uint64_t seed,
                                  const BatchPerturber& perturb = {});

/// CE pre-training for schedule.pretrain_epochs at schedule.pretrain_lr.
SupervisedResult pretrain(MlpModel model, const Dataset& train, const TrainingSchedule& schedule,
                          std::uint64_t seed, const BatchPerturber& perturb = {});

struct EuatResult {
  MlpModel model;  // best validation checkpoint
  std::vector<EpochReport> epochs;
  std::optional<std::size_t> best_epoch;
  std::size_t skipped_epochs = 0;
  bool diverged = false;
};

/// The EUAT phase: per epoch, partition the training set, equalise the two
/// sets by stratified subsampling, run balanced EUAT batches, score the model
/// on validation and keep the best checkpoint.
EuatResult euat_train(const MlpModel& pretrained, const Dataset& train, const Dataset& validation,
                      const TrainingSchedule& schedule, std::uint64_t seed,
                      const BatchPerturber& perturb = {}, const TrainObserver& observer = {});

}  // namespace euat
