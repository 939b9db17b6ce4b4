#include "euat/baselines.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "euat/rng.hpp"

namespace euat {

namespace {
// Lift applied when the calibrated top probability would tie the runner-up.
constexpr double kRankMargin = 1e-12;
}  // namespace

double IsotonicMap::operator()(double x) const {
  if (breakpoints.empty()) throw std::logic_error("isotonic: map is not fitted");
  double y;
  if (x <= breakpoints.front()) {
    y = levels.front();
  } else if (x >= breakpoints.back()) {
    y = levels.back();
  } else {
    const auto hi = static_cast<std::size_t>(
        std::upper_bound(breakpoints.begin(), breakpoints.end(), x) - breakpoints.begin());
    const std::size_t lo = hi - 1;
    const double t = (x - breakpoints[lo]) / (breakpoints[hi] - breakpoints[lo]);
    y = levels[lo] + t * (levels[hi] - levels[lo]);
  }
  return std::clamp(y, 0.0, 1.0);
}

IsotonicMap isotonic_fit(std::span<const double> confidences, std::span<const double> targets) {
  if (confidences.size() != targets.size()) throw std::invalid_argument("isotonic: size mismatch");
  if (confidences.empty()) throw std::invalid_argument("isotonic: no points to fit");

  std::vector<std::size_t> order(confidences.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return confidences[a] < confidences[b]; });

  struct Block {
    double x;
    double sum;
    double weight;
    double mean() const { return sum / weight; }
  };
  std::vector<Block> blocks;
  for (std::size_t k : order) {
    if (!blocks.empty() && blocks.back().x == confidences[k]) {
      blocks.back().sum += targets[k];
      blocks.back().weight += 1.0;
    } else {
      blocks.push_back({confidences[k], targets[k], 1.0});
    }
  }
  const std::vector<double> xs = [&] {
    std::vector<double> v;
    for (const auto& b : blocks) v.push_back(b.x);
    return v;
  }();

  // Pool adjacent violators; each pooled block remembers how many distinct x it spans.
  std::vector<Block> stack;
  std::vector<std::size_t> span;
  for (const auto& b : blocks) {
    stack.push_back(b);
    span.push_back(1);
    while (stack.size() > 1 && stack[stack.size() - 2].mean() >= stack.back().mean()) {
      Block top = stack.back();
      const std::size_t top_span = span.back();
      stack.pop_back();
      span.pop_back();
      stack.back().sum += top.sum;
      stack.back().weight += top.weight;
      span.back() += top_span;
    }
  }
  IsotonicMap map;
  map.breakpoints = xs;
  for (std::size_t k = 0; k < stack.size(); ++k) {
    map.levels.insert(map.levels.end(), span[k], stack[k].mean());
  }
  return map;
}

IsotonicMap isotonic_fit(std::span<const double> confidences, const std::vector<bool>& correct) {
  std::vector<double> targets;
  targets.reserve(correct.size());
  for (bool c : correct) targets.push_back(c ? 1.0 : 0.0);
  return isotonic_fit(confidences, targets);
}

PredictiveDistribution isotonic_apply(const IsotonicMap& map, const PredictiveDistribution& dist) {
  PredictiveDistribution out = dist;
  out.per_sample_probs.reset();
  const std::size_t top = dist.predicted_class();
  const double p_top = dist.probs[top];
  double runner_up = 0.0;
  for (std::size_t c = 0; c < dist.probs.size(); ++c) {
    if (c != top) runner_up = std::max(runner_up, dist.probs[c]);
  }
  const double rest = 1.0 - p_top;
  double calibrated = map(p_top);
  if (rest <= 0.0) {
    // One-hot input: spread the released mass evenly over the other classes.
    const auto k = static_cast<double>(dist.probs.size());
    calibrated = std::max(calibrated, 1.0 / k + kRankMargin);
    const double share = (1.0 - calibrated) / (k - 1.0);
    for (std::size_t c = 0; c < out.probs.size(); ++c) out.probs[c] = c == top ? calibrated : share;
  } else {
    // Keeping the top class above the rescaled runner-up:
    // q > m (1 - q) / rest  <=>  q > m / (rest + m).
    calibrated = std::max(calibrated, runner_up / (rest + runner_up) + kRankMargin);
    const double factor = (1.0 - calibrated) / rest;
    for (std::size_t c = 0; c < out.probs.size(); ++c) {
      out.probs[c] = c == top ? calibrated : dist.probs[c] * factor;
    }
  }
  const double total = std::accumulate(out.probs.begin(), out.probs.end(), 0.0);
  for (double& p : out.probs) p /= total;
  return out;
}

nlohmann::json to_json(const IsotonicMap& map) {
  return {{"breakpoints", map.breakpoints}, {"levels", map.levels}};
}

IsotonicMap isotonic_from_json(const nlohmann::json& doc) {
  IsotonicMap map;
  map.breakpoints = doc.at("breakpoints").get<std::vector<double>>();
  map.levels = doc.at("levels").get<std::vector<double>>();
  if (map.breakpoints.size() != map.levels.size() || map.breakpoints.empty()) {
    throw std::invalid_argument("isotonic: malformed map");
  }
  return map;
}

EnsembleResult ensemble_train(const EnsembleConfig& config, const Dataset& train,
                              const Dataset* validation, std::span<const std::uint64_t> seeds,
                              const BatchPerturber& perturb) {
  if (config.members == 0) throw std::invalid_argument("ensemble: need at least one member");
  if (seeds.size() != config.members) throw std::invalid_argument("ensemble: one seed per member");
  SupervisedConfig member_config = config.training;
  if (config.split_budget) {
    member_config.epochs = std::max<std::size_t>(1, config.training.epochs / config.members);
  }
  EnsembleResult result;
  for (std::size_t m = 0; m < config.members; ++m) {
    MlpModel init = MlpModel::initialize(config.widths, config.dropout_rate,
                                         derive_seed(seeds[m], "init"));
    auto run = supervised_train(std::move(init), train, validation, member_config,
                                config.selection, config.eval_mc_samples, seeds[m], perturb);
    result.ensemble.members.push_back(run.model);
    result.ensemble.seeds.push_back(seeds[m]);
    result.member_runs.push_back(std::move(run));
  }
  return result;
}

std::vector<PredictiveDistribution> ensemble_predict(const Ensemble& ensemble, const Tensor& inputs) {
  if (ensemble.members.empty()) throw std::invalid_argument("ensemble: no members");
  const std::size_t classes = ensemble.members.front().class_count();
  Tensor mean = Tensor::matrix(inputs.rows(), classes);
  for (const auto& member : ensemble.members) {
    if (member.class_count() != classes) throw std::invalid_argument("ensemble: class count mismatch");
    const Tensor probs = softmax(predict_logits(member, inputs));
    for (std::size_t k = 0; k < probs.size(); ++k) mean[k] += probs[k];
  }
  const double inv = 1.0 / static_cast<double>(ensemble.members.size());
  std::vector<PredictiveDistribution> out(inputs.rows());
  for (std::size_t r = 0; r < inputs.rows(); ++r) {
    const auto row = mean.row(r);
    out[r].probs.assign(row.begin(), row.end());
    if (ensemble.members.size() > 1) {
      for (double& p : out[r].probs) p *= inv;
    }
    out[r].sample_count = ensemble.members.size();
  }
  return out;
}

SupervisedConfig baseline_config(const TrainingSchedule& schedule) {
  SupervisedConfig config;
  config.epochs = schedule.pretrain_epochs + schedule.euat_epochs;
  config.lr = schedule.pretrain_lr;
  config.momentum = schedule.momentum;
  config.weight_decay = schedule.weight_decay;
  config.batch_size = schedule.batch_size;
  return config;
}

SupervisedResult train_ce(const MlpModel& init, const Dataset& train, const Dataset& validation,
                          const TrainingSchedule& schedule, std::uint64_t seed,
                          const BatchPerturber& perturb) {
  schedule.validate();
  SupervisedConfig config = baseline_config(schedule);
  config.phase = "ce";
  return supervised_train(init, train, &validation, config, schedule.selection,
                          schedule.eval_mc_samples, seed, perturb);
}

SupervisedResult train_ce_pe(const MlpModel& init, const Dataset& train, const Dataset& validation,
                             const TrainingSchedule& schedule, double lambda, std::uint64_t seed,
                             const BatchPerturber& perturb) {
  schedule.validate();
  if (!(lambda >= 0.0)) throw std::invalid_argument("ce+pe: lambda must be non-negative");
  SupervisedConfig config = baseline_config(schedule);
  config.loss = SupervisedLoss::ce_pe;
  config.lambda = lambda;
  config.phase = "ce_pe";
  return supervised_train(init, train, &validation, config, schedule.selection,
                          schedule.eval_mc_samples, seed, perturb);
}

}  // namespace euat
