#pragma once

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "euat/uncertainty.hpp"

namespace euat {

struct EvalRecord {
  bool correct = false;
  double uncertainty = 0.0;  // normalized predictive entropy
  double confidence = 0.0;   // max class probability
  double residual = 0.0;     // 1 - p(true label)
};

EvalRecord make_record(const PredictiveDistribution& dist, std::size_t label);
std::vector<EvalRecord> make_records(std::span<const PredictiveDistribution> dists,
                                     std::span<const std::size_t> labels);

/// Uncertainty confusion matrix. "Certain" means uncertainty <= threshold.
///   tc: correct and certain     tu: wrong and uncertain
///   fc: wrong and certain       fu: correct and uncertain
struct UncertaintyConfusionMatrix {
  std::size_t tc = 0;
  std::size_t tu = 0;
  std::size_t fc = 0;
  std::size_t fu = 0;
  double threshold = 0.0;

  std::size_t total() const { return tc + tu + fc + fu; }
};

UncertaintyConfusionMatrix build_ucm(std::span<const EvalRecord> records, double threshold);

/// (TC + TU) / total.
double uncertainty_accuracy(const UncertaintyConfusionMatrix& ucm);

/// P(u_wrong > u_correct) + P(tie) / 2 via mid-ranks. nullopt when every
/// record is correct or every record is wrong.
std::optional<double> uauc(std::span<const EvalRecord> records);

/// Equal-width confidence bins; bin b covers (b/n, (b+1)/n], confidence 0 joins bin 0.
double ece(std::span<const EvalRecord> records, std::size_t bins = 15);

/// Exact 1-D Wasserstein-1 distance between two empirical samples.
double wasserstein1(std::span<const double> a, std::span<const double> b);

/// Pearson correlation of residual against uncertainty; nullopt on zero variance.
std::optional<double> residual_correlation(std::span<const EvalRecord> records);
/// Same with the 0/1 error indicator as the residual.
std::optional<double> binary_residual_correlation(std::span<const EvalRecord> records);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

enum class ThresholdObjective { uncertainty_accuracy, flip_gain };

/// Objective value of one threshold: uA, or (wrong above - correct above) / n.
double threshold_objective(std::span<const EvalRecord> records, double threshold,
                           ThresholdObjective objective);
/// Candidates: {0, 1} and the midpoints between consecutive distinct
/// uncertainties, in ascending order.
std::vector<double> threshold_candidates(std::span<const EvalRecord> records);
/// Exhaustive argmax over the candidates; ties go to the smaller threshold.
double tune_threshold(std::span<const EvalRecord> records,
                      ThresholdObjective objective = ThresholdObjective::uncertainty_accuracy);

double error_rate(std::span<const EvalRecord> records);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
};
/// Equal-width bins over [0, 1]; the last bin is closed.
Histogram uncertainty_histogram(std::span<const double> values, std::size_t bins = 50);

struct MetricsReport {
  std::size_t samples = 0;
  std::size_t correct_count = 0;
  double threshold = 0.0;
  double error = 0.0;
  UncertaintyConfusionMatrix ucm;
  double ua = 0.0;
  std::optional<double> uauc_value;
  double ece_value = 0.0;
  std::size_t ece_bins = 15;
  std::optional<double> wasserstein;
  std::optional<double> correlation;
  std::optional<double> binary_correlation;
  Histogram hist_correct;
  Histogram hist_wrong;
};

MetricsReport compute_metrics(std::span<const EvalRecord> records, double threshold,
                              std::size_t ece_bins = 15);
nlohmann::json to_json(const MetricsReport& report);

}  // namespace euat
