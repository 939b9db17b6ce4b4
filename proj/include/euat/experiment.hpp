#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "euat/baselines.hpp"
#include "euat/config.hpp"
#include "euat/dataset.hpp"
#include "euat/flip.hpp"
#include "euat/metrics.hpp"
#include "euat/robustness.hpp"
#include "euat/trainer.hpp"

namespace euat {

/// Named substreams of the root seed.
struct SeedPlan {
  std::uint64_t data, split, init, train, eval, attack, corruption;
  static SeedPlan from_root(std::uint64_t root);
};

/// Whatever a method produced, behind one prediction interface.
struct TrainedPredictor {
  Method method = Method::ce;
  std::optional<MlpModel> model;
  std::optional<Ensemble> ensemble;
  std::optional<IsotonicMap> calibration;

  /// MC-dropout averages for single models (with the isotonic map applied
  /// when present); deterministic member averages for ensembles.
  std::vector<PredictiveDistribution> predict(const Tensor& inputs, std::size_t samples,
                                              std::uint64_t seed) const;
  std::vector<std::uint64_t> checksums() const;
};

/// FGSM against whatever the predictor is: the single model, or the CE of the
/// ensemble's mean prediction.
Tensor fgsm(const TrainedPredictor& predictor, const Tensor& inputs,
            std::span<const std::size_t> labels, const AttackConfig& config);

struct TrainOutcome {
  TrainedPredictor predictor;
  std::vector<EpochReport> epochs;
  std::vector<double> pretrain_losses;
  bool diverged = false;
};

std::vector<std::size_t> layer_widths(const ExperimentConfig& config, const Dataset& data);

/// Trains `config.method` on the split. A non-empty perturber turns every
/// method into its adversarial-training variant.
TrainOutcome train_method(const ExperimentConfig& config, const SplitDataset& data,
                          const BatchPerturber& perturb = {});

/// FGSM adversarial training of `method`: every training batch (and, for
/// EUAT, the partition) uses the attacked inputs.
TrainOutcome adversarial_train(Method method, ExperimentConfig config, const SplitDataset& data,
                               const AttackConfig& attack);

SplitDataset prepare_data(const ExperimentConfig& config);

class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct RunManifest {
  nlohmann::json document;  // the whole manifest
  nlohmann::json metrics;   // deterministic metrics report (no timings)
  TrainOutcome outcome;
  double threshold = 0.0;
  bool ok = true;
  std::string failed_stage;
};

struct RunOptions {
  bool write_files = true;
};

/// dataset -> training -> threshold tuning on validation -> test evaluation
/// (clean, plus flip/OOD/adversarial when enabled). Stage failures are caught
/// and recorded; the manifest is still written.
RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Metric rows x method columns, CSV.
std::string compare_table(std::span<const std::string> methods,
                          std::span<const nlohmann::json> metrics_reports);

/// Serialised metrics report exactly as written to metrics.json.
std::string metrics_text(const nlohmann::json& metrics);

}  // namespace euat
