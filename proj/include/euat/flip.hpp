#pragma once

#include <cstdint>
#include <span>

#include <json.hpp>

#include "euat/dataset.hpp"
#include "euat/metrics.hpp"
#include "euat/nn.hpp"
#include "euat/uncertainty.hpp"

namespace euat {

/// Binary-task evaluation that inverts every prediction whose normalized
/// entropy exceeds the threshold. Class 1 is the positive class; the
/// F1/precision/TPR/TNR figures describe the flipped predictions.
struct FlipReport {
  double threshold = 0.0;
  std::size_t flipped = 0;
  double error_without_flip = 0.0;
  double error_with_flip = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
  MetricsReport metrics;  // un-flipped predictions at the same threshold

  double flip_gain() const { return error_without_flip - error_with_flip; }
};

FlipReport flip_eval(std::span<const PredictiveDistribution> predictions,
                     std::span<const std::size_t> labels, double threshold,
                     std::size_t ece_bins = 15);

FlipReport flip_eval(const MlpModel& model, const Dataset& test, double threshold,
                     std::size_t samples, std::uint64_t seed);

nlohmann::json to_json(const FlipReport& report);

}  // namespace euat
