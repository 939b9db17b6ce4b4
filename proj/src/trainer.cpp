#include "euat/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "euat/rng.hpp"

namespace euat {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void shuffle_in_place(std::vector<std::size_t>& v, std::uint64_t seed) {
  CounterRng rng(seed);
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.next_below(i)]);
}

std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

double train_error(const MlpModel& model, const Tensor& inputs, std::span<const std::size_t> labels) {
  const auto split = partition(model, inputs, labels);
  return static_cast<double>(split.wrong.size()) / static_cast<double>(labels.size());
}

void fill_validation(EpochReport& row, const ValidationSummary& summary) {
  const auto& m = summary.metrics;
  row.validation_error = m.error;
  row.ua = m.ua;
  row.uauc = m.uauc_value;
  row.ece = m.ece_value;
  row.wasserstein = m.wasserstein;
  row.corr = m.correlation;
  row.selection_value = summary.selection_value;
}

std::string csv_optional(const std::optional<double>& v) {
  if (!v) return "nan";
  std::ostringstream s;
  s.precision(17);
  s << *v;
  return s.str();
}

std::string csv_double(double v) { return csv_optional(v); }

}  // namespace

SelectionMetric parse_selection_metric(const std::string& name) {
  if (name == "uA" || name == "ua") return SelectionMetric::ua;
  if (name == "uAUC" || name == "uauc") return SelectionMetric::uauc;
  if (name == "corr") return SelectionMetric::corr;
  if (name == "wasserstein") return SelectionMetric::wasserstein;
  if (name == "error") return SelectionMetric::error;
  throw std::invalid_argument("unknown selection metric '" + name + "'");
}

std::string to_string(SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::ua: return "uA";
    case SelectionMetric::uauc: return "uAUC";
    case SelectionMetric::corr: return "corr";
    case SelectionMetric::wasserstein: return "wasserstein";
    case SelectionMetric::error: return "error";
  }
  return "unknown";
}

void TrainingSchedule::validate() const {
  if (batch_size == 0 || batch_size % 2 != 0) {
    throw std::invalid_argument("schedule: batch size must be a positive even number");
  }
  if (pretrain_lr < 0.0 || euat_lr < 0.0) throw std::invalid_argument("schedule: negative learning rate");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("schedule: momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("schedule: negative weight decay");
  if (train_mc_samples == 0 || eval_mc_samples == 0) {
    throw std::invalid_argument("schedule: MC sample counts must be positive");
  }
}

std::vector<EvalRecord> evaluate_records(const MlpModel& model, const Dataset& data,
                                         std::size_t samples, std::uint64_t seed) {
  const auto dists = mc_predict_batch(model, data.inputs, samples, seed);
  return make_records(dists, data.labels);
}

double selection_value(const MetricsReport& m, SelectionMetric metric) {
  constexpr double kWorst = -std::numeric_limits<double>::infinity();
  switch (metric) {
    case SelectionMetric::ua: return m.ua;
    case SelectionMetric::uauc: return m.uauc_value.value_or(kWorst);
    case SelectionMetric::corr: return m.correlation.value_or(kWorst);
    case SelectionMetric::wasserstein: return m.wasserstein.value_or(kWorst);
    case SelectionMetric::error: return -m.error;
  }
  return kWorst;
}

ValidationSummary summarize_validation(std::span<const EvalRecord> records, SelectionMetric metric) {
  ValidationSummary s;
  s.metrics = compute_metrics(records, tune_threshold(records));
  s.selection_value = selection_value(s.metrics, metric);
  return s;
}

std::string epoch_report_csv(std::span<const EpochReport> reports, bool with_timing) {
  std::ostringstream out;
  out << "epoch,phase,train_loss,train_error,validation_error,uA,uAUC,ECE,wasserstein,corr,"
         "selection,correct_set,wrong_set,skipped";
  if (with_timing) out << ",wall_time";
  out << '\n';
  for (const auto& r : reports) {
    out << r.epoch << ',' << r.phase << ',' << csv_double(r.train_loss) << ','
        << csv_double(r.train_error) << ',' << csv_double(r.validation_error) << ','
        << csv_double(r.ua) << ',' << csv_optional(r.uauc) << ',' << csv_double(r.ece) << ','
        << csv_optional(r.wasserstein) << ',' << csv_optional(r.corr) << ','
        << csv_double(r.selection_value) << ',' << r.correct_count << ',' << r.wrong_count << ','
        << (r.skipped ? 1 : 0);
    if (with_timing) out << ',' << csv_double(r.wall_seconds);
    out << '\n';
  }
  return out.str();
}

PartitionedTrainSet partition(const MlpModel& model, const Tensor& inputs,
                              std::span<const std::size_t> labels, std::size_t epoch) {
  if (inputs.rows() != labels.size()) throw std::invalid_argument("partition: label count mismatch");
  const Tensor logits = predict_logits(model, inputs);
  PartitionedTrainSet out;
  out.epoch = epoch;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    (argmax(logits.row(r)) == labels[r] ? out.correct : out.wrong).push_back(r);
  }
  return out;
}

std::vector<std::size_t> apportion(std::span<const std::size_t> class_sizes, std::size_t target) {
  const std::size_t total = std::accumulate(class_sizes.begin(), class_sizes.end(), std::size_t{0});
  std::vector<std::size_t> quota(class_sizes.size(), 0);
  if (total == 0) return quota;
  std::vector<std::size_t> remainder(class_sizes.size(), 0);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < class_sizes.size(); ++c) {
    quota[c] = target * class_sizes[c] / total;
    remainder[c] = target * class_sizes[c] % total;
    assigned += quota[c];
  }
  std::vector<std::size_t> order(class_sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < target && k < order.size(); ++k) {
    ++quota[order[k]];
    ++assigned;
  }
  return quota;
}

std::vector<std::size_t> stratified_subsample(std::span<const std::size_t> ids,
                                              std::size_t target_size,
                                              std::span<const std::size_t> labels,
                                              std::uint64_t seed) {
  if (target_size >= ids.size()) {
    if (target_size > ids.size()) {
      std::clog << "stratified_subsample: target " << target_size << " exceeds the " << ids.size()
                << " available ids; returning all\n";
    }
    return {ids.begin(), ids.end()};
  }
  std::size_t classes = 0;
  for (std::size_t id : ids) classes = std::max(classes, labels[id] + 1);
  std::vector<std::vector<std::size_t>> positions(classes);  // positions within `ids`
  for (std::size_t k = 0; k < ids.size(); ++k) positions[labels[ids[k]]].push_back(k);
  std::vector<std::size_t> sizes;
  for (const auto& p : positions) sizes.push_back(p.size());
  const auto quota = apportion(sizes, target_size);

  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < classes; ++c) {
    auto pool = positions[c];
    shuffle_in_place(pool, derive_seed(seed, c));
    chosen.insert(chosen.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<std::size_t> out;
  out.reserve(chosen.size());
  for (std::size_t k : chosen) out.push_back(ids[k]);
  return out;
}

std::vector<LabeledBatch> balanced_batches(const Tensor& inputs, std::span<const std::size_t> labels,
                                           std::span<const std::size_t> correct_subset,
                                           std::span<const std::size_t> wrong_set,
                                           std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0 || batch_size % 2 != 0) {
    throw std::invalid_argument("balanced batches: batch size must be a positive even number");
  }
  std::vector<std::size_t> correct(correct_subset.begin(), correct_subset.end());
  std::vector<std::size_t> wrong(wrong_set.begin(), wrong_set.end());
  shuffle_in_place(correct, derive_seed(seed, "correct"));
  shuffle_in_place(wrong, derive_seed(seed, "wrong"));
  const std::size_t half = batch_size / 2;
  const std::size_t count =
      std::max((correct.size() + half - 1) / half, (wrong.size() + half - 1) / half);

  std::vector<LabeledBatch> batches;
  for (std::size_t b = 0; b < count; ++b) {
    std::vector<std::pair<std::size_t, Membership>> rows;
    for (std::size_t k = b * half; k < std::min((b + 1) * half, correct.size()); ++k) {
      rows.emplace_back(correct[k], Membership::correct_set);
    }
    for (std::size_t k = b * half; k < std::min((b + 1) * half, wrong.size()); ++k) {
      rows.emplace_back(wrong[k], Membership::wrong_set);
    }
    CounterRng rng(derive_seed(derive_seed(seed, "within"), b));
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.next_below(i)]);

    LabeledBatch batch;
    for (const auto& [id, membership] : rows) {
      batch.ids.push_back(id);
      batch.labels.push_back(labels[id]);
      batch.membership.push_back(membership);
    }
    batch.inputs = inputs.gather_rows(batch.ids);
    batches.push_back(std::move(batch));
  }
  return batches;
}

bool stop_condition(std::size_t epoch, std::size_t epoch_budget, std::size_t skip_counter,
                    std::size_t max_skips) {
  return epoch >= epoch_budget || skip_counter >= max_skips;
}

SupervisedResult supervised_train(MlpModel model, const Dataset& train, const Dataset* validation,
                                  const SupervisedConfig& config, SelectionMetric selection,
                                  std::size_t eval_samples, std::uint64_t seed,
                                  const BatchPerturber& perturb) {
  if (config.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (train.size() == 0) throw std::invalid_argument("train: empty training set");
  SupervisedResult result;
  OptimizerState opt =
      OptimizerState::for_model(model, config.lr, config.momentum, config.weight_decay);
  const std::uint64_t shuffle_seed = derive_seed(seed, "shuffle");
  const std::uint64_t mask_seed = derive_seed(seed, "masks");
  const std::uint64_t eval_seed = derive_seed(seed, "eval");
  double best_value = -std::numeric_limits<double>::infinity();
  result.model = model;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = Clock::now();
    const MlpModel epoch_start = model;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle_in_place(order, derive_seed(shuffle_seed, epoch));

    double loss_sum = 0.0;
    std::size_t batches = 0;
    bool diverged = false;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::span<const std::size_t> ids =
          std::span<const std::size_t>(order).subspan(begin, std::min(config.batch_size, order.size() - begin));
      LabeledBatch batch;
      batch.ids.assign(ids.begin(), ids.end());
      batch.inputs = train.inputs.gather_rows(ids);
      for (std::size_t id : ids) batch.labels.push_back(train.labels[id]);
      if (perturb) batch.inputs = perturb(model, batch.inputs, batch.labels);

      const std::uint64_t step_seed = derive_seed(derive_seed(mask_seed, epoch), batches);
      const BatchLoss loss =
          config.loss == SupervisedLoss::ce
              ? ce_batch_loss(model, batch, config.mc_samples, step_seed)
              : ce_pe_batch_loss(model, batch, config.lambda, config.mc_samples, step_seed);
      if (!std::isfinite(loss.value) || sgd_step(model, loss.grads, opt) != StepStatus::applied) {
        diverged = true;
        break;
      }
      loss_sum += loss.value;
      ++batches;
    }
    if (diverged) {
      model = epoch_start;
      result.diverged = true;
      if (!validation) result.model = model;
      break;
    }
    result.loss_trajectory.push_back(loss_sum / static_cast<double>(batches));

    if (validation) {
      EpochReport row;
      row.epoch = epoch + 1;
      row.phase = config.phase;
      row.train_loss = result.loss_trajectory.back();
      row.train_error = train_error(model, train.inputs, train.labels);
      fill_validation(row, summarize_validation(
                               evaluate_records(model, *validation, eval_samples, eval_seed),
                               selection));
      row.wall_seconds = seconds_since(start);
      if (row.selection_value > best_value || !result.best_epoch) {
        best_value = row.selection_value;
        result.best_epoch = row.epoch;
        result.model = model;
      }
      result.epochs.push_back(row);
    } else {
      result.model = model;
    }
  }
  return result;
}

SupervisedResult pretrain(MlpModel model, const Dataset& train, const TrainingSchedule& schedule,
                          std::uint64_t seed, const BatchPerturber& perturb) {
  schedule.validate();
  SupervisedConfig config;
  config.epochs = schedule.pretrain_epochs;
  config.lr = schedule.pretrain_lr;
  config.momentum = schedule.momentum;
  config.weight_decay = schedule.weight_decay;
  config.batch_size = schedule.batch_size;
  config.phase = "pretrain";
  return supervised_train(std::move(model), train, nullptr, config, schedule.selection,
                          schedule.eval_mc_samples, seed, perturb);
}

EuatResult euat_train(const MlpModel& pretrained, const Dataset& train, const Dataset& validation,
                      const TrainingSchedule& schedule, std::uint64_t seed,
                      const BatchPerturber& perturb, const TrainObserver& observer) {
  schedule.validate();
  EuatResult result;
  result.model = pretrained;
  MlpModel model = pretrained;
  OptimizerState opt = OptimizerState::for_model(model, schedule.euat_lr, schedule.momentum,
                                                 schedule.weight_decay);
  const std::uint64_t sample_seed = derive_seed(seed, "subsample");
  const std::uint64_t batch_seed = derive_seed(seed, "batches");
  const std::uint64_t mask_seed = derive_seed(seed, "masks");
  const std::uint64_t eval_seed = derive_seed(seed, "eval");
  double best_value = -std::numeric_limits<double>::infinity();
  std::size_t skips = 0;

  for (std::size_t epoch = 0; !stop_condition(epoch, schedule.euat_epochs, skips,
                                              schedule.max_consecutive_skips);
       ++epoch) {
    const auto start = Clock::now();
    const Tensor inputs = perturb ? perturb(model, train.inputs, train.labels) : train.inputs;
    const PartitionedTrainSet split = partition(model, inputs, train.labels, epoch);
    if (observer.on_partition) observer.on_partition(split);

    EpochReport row;
    row.epoch = epoch + 1;
    row.phase = "euat";
    row.correct_count = split.correct.size();
    row.wrong_count = split.wrong.size();
    row.train_error = static_cast<double>(split.wrong.size()) / static_cast<double>(train.size());

    if (split.wrong.empty()) {
      ++skips;
      ++result.skipped_epochs;
      row.skipped = true;
      row.wall_seconds = seconds_since(start);
      result.epochs.push_back(row);
      continue;
    }
    skips = 0;

    // Equalise the two sets; normally the correct set is the larger one.
    const std::uint64_t epoch_sample_seed = derive_seed(sample_seed, epoch);
    std::vector<std::size_t> correct = split.correct;
    std::vector<std::size_t> wrong = split.wrong;
    if (wrong.size() <= correct.size()) {
      correct = stratified_subsample(correct, wrong.size(), train.labels, epoch_sample_seed);
    } else {
      wrong = stratified_subsample(wrong, correct.size(), train.labels, epoch_sample_seed);
    }
    const auto batches = balanced_batches(inputs, train.labels, correct, wrong,
                                          schedule.batch_size, derive_seed(batch_seed, epoch));

    const MlpModel epoch_start = model;
    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      if (observer.on_batch) observer.on_batch(batches[b]);
      const BatchLoss loss = euat_loss(model, batches[b], schedule.train_mc_samples,
                                       derive_seed(derive_seed(mask_seed, epoch), b));
      if (!std::isfinite(loss.value) || sgd_step(model, loss.grads, opt) != StepStatus::applied) {
        diverged = true;
        break;
      }
      loss_sum += loss.value;
    }
    if (diverged) {
      model = epoch_start;
      result.diverged = true;
      break;
    }
    row.train_loss = batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size());
    fill_validation(row, summarize_validation(
                             evaluate_records(model, validation, schedule.eval_mc_samples, eval_seed),
                             schedule.selection));
    row.wall_seconds = seconds_since(start);
    if (row.selection_value > best_value || !result.best_epoch) {
      best_value = row.selection_value;
      result.best_epoch = row.epoch;
      result.model = model;
    }
    result.epochs.push_back(row);
  }
  return result;
}

}  // namespace euat
