#include "euat/flip.hpp"

#include <stdexcept>

namespace euat {

namespace {
double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

FlipReport flip_eval(std::span<const PredictiveDistribution> predictions,
                     std::span<const std::size_t> labels, double threshold, std::size_t ece_bins) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("flip: size mismatch");
  if (predictions.empty()) throw std::invalid_argument("flip: no predictions");
  for (const auto& p : predictions) {
    if (p.class_count() != 2) throw std::invalid_argument("flip: task is not binary");
  }
  FlipReport report;
  report.threshold = threshold;
  std::size_t wrong_plain = 0, wrong_flipped = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const std::size_t plain = predictions[i].predicted_class();
    std::size_t flipped = plain;
    if (normalized_entropy(predictions[i]) > threshold) {
      flipped = 1 - plain;
      ++report.flipped;
    }
    wrong_plain += plain != labels[i];
    wrong_flipped += flipped != labels[i];
    if (flipped == 1) {
      ++(labels[i] == 1 ? tp : fp);
    } else {
      ++(labels[i] == 0 ? tn : fn);
    }
  }
  const auto n = predictions.size();
  report.error_without_flip = ratio(wrong_plain, n);
  report.error_with_flip = ratio(wrong_flipped, n);
  report.precision = ratio(tp, tp + fp);
  report.tpr = ratio(tp, tp + fn);
  report.tnr = ratio(tn, tn + fp);
  report.f1 = ratio(2 * tp, 2 * tp + fp + fn);
  const auto records = make_records(predictions, labels);
  report.metrics = compute_metrics(records, threshold, ece_bins);
  return report;
}

FlipReport flip_eval(const MlpModel& model, const Dataset& test, double threshold,
                     std::size_t samples, std::uint64_t seed) {
  if (test.class_count != 2) throw std::invalid_argument("flip: task is not binary");
  const auto predictions = mc_predict_batch(model, test.inputs, samples, seed);
  return flip_eval(predictions, test.labels, threshold);
}

nlohmann::json to_json(const FlipReport& r) {
  return {{"threshold", r.threshold},
          {"flipped", r.flipped},
          {"error_without_flip", r.error_without_flip},
          {"error_with_flip", r.error_with_flip},
          {"flip_gain", r.flip_gain()},
          {"f1", r.f1},
          {"precision", r.precision},
          {"tpr", r.tpr},
          {"tnr", r.tnr},
          {"metrics", to_json(r.metrics)}};
}

}  // namespace euat
