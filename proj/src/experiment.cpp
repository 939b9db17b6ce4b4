#include "euat/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "euat/checkpoint.hpp"
#include "euat/rng.hpp"

namespace euat {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json epoch_json(const EpochReport& r) {
  return {{"epoch", r.epoch},
          {"phase", r.phase},
          {"train_loss", r.train_loss},
          {"train_error", r.train_error},
          {"validation_error", r.validation_error},
          {"uA", r.ua},
          {"uAUC", optional_json(r.uauc)},
          {"ece", r.ece},
          {"wasserstein", optional_json(r.wasserstein)},
          {"corr", optional_json(r.corr)},
          {"selection", r.selection_value},
          {"correct_set", r.correct_count},
          {"wrong_set", r.wrong_count},
          {"skipped", r.skipped},
          {"wall_time", r.wall_seconds}};
}

std::string histogram_csv(const MetricsReport& m) {
  std::ostringstream out;
  out.precision(17);
  out << "bin_lo,bin_hi,correct,wrong\n";
  for (std::size_t b = 0; b < m.hist_correct.counts.size(); ++b) {
    out << m.hist_correct.edges[b] << ',' << m.hist_correct.edges[b + 1] << ','
        << m.hist_correct.counts[b] << ',' << m.hist_wrong.counts[b] << '\n';
  }
  return out.str();
}

std::string predictions_csv(std::span<const PredictiveDistribution> preds,
                            std::span<const std::size_t> labels) {
  std::ostringstream out;
  out.precision(17);
  out << "id,label,predicted,uncertainty";
  const std::size_t classes = preds.empty() ? 0 : preds.front().class_count();
  for (std::size_t c = 0; c < classes; ++c) out << ",p" << c;
  out << '\n';
  for (std::size_t i = 0; i < preds.size(); ++i) {
    out << i << ',' << labels[i] << ',' << preds[i].predicted_class() << ','
        << normalized_entropy(preds[i]);
    for (double p : preds[i].probs) out << ',' << p;
    out << '\n';
  }
  return out.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

}  // namespace

SeedPlan SeedPlan::from_root(std::uint64_t root) {
  return {derive_seed(root, "data"),  derive_seed(root, "split"),  derive_seed(root, "init"),
          derive_seed(root, "train"), derive_seed(root, "eval"),   derive_seed(root, "attack"),
          derive_seed(root, "corruption")};
}

std::vector<PredictiveDistribution> TrainedPredictor::predict(const Tensor& inputs,
                                                              std::size_t samples,
                                                              std::uint64_t seed) const {
  if (ensemble) return ensemble_predict(*ensemble, inputs);
  if (!model) throw std::logic_error("predictor: nothing trained");
  auto preds = mc_predict_batch(*model, inputs, samples, seed);
  if (calibration) {
    for (auto& p : preds) p = isotonic_apply(*calibration, p);
  }
  return preds;
}

std::vector<std::uint64_t> TrainedPredictor::checksums() const {
  std::vector<std::uint64_t> out;
  if (model) out.push_back(model->checksum());
  if (ensemble) {
    for (const auto& m : ensemble->members) out.push_back(m.checksum());
  }
  return out;
}

Tensor fgsm(const TrainedPredictor& predictor, const Tensor& inputs,
            std::span<const std::size_t> labels, const AttackConfig& config) {
  if (predictor.model) return fgsm(*predictor.model, inputs, labels, config);
  if (!predictor.ensemble) throw std::logic_error("fgsm: nothing trained");
  config.validate();
  if (config.epsilon == 0.0) return inputs;
  const auto& members = predictor.ensemble->members;
  const std::size_t rows = inputs.rows();
  const std::size_t classes = members.front().class_count();
  std::vector<ForwardResult> passes;
  std::vector<Tensor> probs;
  Tensor mean = Tensor::matrix(rows, classes);
  for (const auto& m : members) {
    passes.push_back(forward(m, inputs));
    probs.push_back(softmax(passes.back().logits));
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += probs.back()[k];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (double& v : mean.data()) v *= inv;
  Tensor grad = Tensor::matrix(rows, inputs.cols());
  for (std::size_t m = 0; m < members.size(); ++m) {
    Tensor upstream = Tensor::matrix(rows, classes);
    for (std::size_t r = 0; r < rows; ++r) {
      const LossTerm term = ce_loss(mean.row(r), labels[r]);
      double dot = 0.0;
      for (std::size_t c = 0; c < classes; ++c) dot += term.grad[c] * probs[m](r, c);
      for (std::size_t c = 0; c < classes; ++c) {
        upstream(r, c) = inv * probs[m](r, c) * (term.grad[c] - dot);
      }
    }
    const Tensor g = backward(members[m], passes[m].cache, upstream).input;
    for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];
  }
  return sign_step(inputs, grad, config);
}

std::vector<std::size_t> layer_widths(const ExperimentConfig& config, const Dataset& data) {
  std::vector<std::size_t> widths{data.feature_count()};
  widths.insert(widths.end(), config.model.hidden.begin(), config.model.hidden.end());
  widths.push_back(data.class_count);
  return widths;
}

TrainOutcome train_method(const ExperimentConfig& config, const SplitDataset& data,
                          const BatchPerturber& perturb) {
  const SeedPlan seeds = SeedPlan::from_root(config.seed);
  const auto widths = layer_widths(config, data.train);
  const MlpModel init = MlpModel::initialize(widths, config.model.dropout_rate, seeds.init);
  // CE-family baselines share the pre-training seed, so their first
  // pretrain_epochs follow exactly the trajectory EUAT starts from.
  const std::uint64_t supervised_seed = derive_seed(seeds.train, "supervised");
  const auto& schedule = config.schedule;

  TrainOutcome out;
  out.predictor.method = config.method;
  switch (config.method) {
    case Method::euat: {
      auto pre = pretrain(init, data.train, schedule, supervised_seed, perturb);
      out.pretrain_losses = pre.loss_trajectory;
      if (pre.diverged) throw std::runtime_error("pre-training diverged");
      auto run = euat_train(pre.model, data.train, data.validation, schedule,
                            derive_seed(seeds.train, "euat"), perturb);
      out.diverged = run.diverged;
      out.epochs = std::move(run.epochs);
      out.predictor.model = std::move(run.model);
      break;
    }
    case Method::ce:
    case Method::calibrated_ce: {
      auto run = train_ce(init, data.train, data.validation, schedule, supervised_seed, perturb);
      out.diverged = run.diverged;
      out.epochs = std::move(run.epochs);
      out.predictor.model = std::move(run.model);
      if (config.method == Method::calibrated_ce) {
        const auto preds = mc_predict_batch(*out.predictor.model, data.validation.inputs,
                                            schedule.eval_mc_samples,
                                            derive_seed(seeds.eval, "calibration"));
        std::vector<double> conf;
        std::vector<double> hit;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          conf.push_back(preds[i].confidence());
          hit.push_back(preds[i].predicted_class() == data.validation.labels[i] ? 1.0 : 0.0);
        }
        out.predictor.calibration = isotonic_fit(conf, hit);
      }
      break;
    }
    case Method::ce_pe: {
      auto run = train_ce_pe(init, data.train, data.validation, schedule, config.ce_pe_lambda,
                             supervised_seed, perturb);
      out.diverged = run.diverged;
      out.epochs = std::move(run.epochs);
      out.predictor.model = std::move(run.model);
      break;
    }
    case Method::ensemble: {
      EnsembleConfig ec;
      ec.widths = widths;
      ec.dropout_rate = config.model.dropout_rate;
      ec.training = baseline_config(schedule);
      ec.training.phase = "ensemble";
      ec.members = config.ensemble_members;
      ec.split_budget = config.ensemble_split_budget;
      ec.selection = schedule.selection;
      ec.eval_mc_samples = schedule.eval_mc_samples;
      std::vector<std::uint64_t> member_seeds;
      for (std::size_t m = 0; m < ec.members; ++m) {
        member_seeds.push_back(derive_seed(derive_seed(seeds.train, "ensemble"), m));
      }
      auto run = ensemble_train(ec, data.train, &data.validation, member_seeds, perturb);
      for (std::size_t m = 0; m < run.member_runs.size(); ++m) {
        for (auto row : run.member_runs[m].epochs) {
          row.phase = "ensemble_member_" + std::to_string(m);
          out.epochs.push_back(row);
        }
        out.diverged = out.diverged || run.member_runs[m].diverged;
      }
      out.predictor.ensemble = std::move(run.ensemble);
      break;
    }
  }
  return out;
}

TrainOutcome adversarial_train(Method method, ExperimentConfig config, const SplitDataset& data,
                               const AttackConfig& attack) {
  config.method = method;
  return train_method(config, data, fgsm_perturber(attack));
}

SplitDataset prepare_data(const ExperimentConfig& config) {
  const SeedPlan seeds = SeedPlan::from_root(config.seed);
  Dataset data;
  if (config.dataset.source == "idx") {
    data = load_idx(config.dataset.idx_images, config.dataset.idx_labels);
  } else {
    GeneratorSpec spec = config.dataset.generator;
    spec.seed = seeds.data;
    data = generate_dataset(spec);
  }
  if (config.dataset.binary_positive) data = make_binary_task(data, *config.dataset.binary_positive);
  return split_dataset(data, config.dataset.validation_fraction, config.dataset.test_fraction,
                       seeds.split);
}

std::string metrics_text(const json& metrics) { return metrics.dump(2) + "\n"; }

RunManifest run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  const auto t_total = Clock::now();
  RunManifest run;
  json& doc = run.document;
  doc = {{"format", "euat-run-manifest"},
         {"version", 1},
         {"code_version", EUAT_VERSION},
         {"config", to_json(config)},
         {"status", "ok"},
         {"failed_stage", nullptr}};
  json wall = json::object();
  const SeedPlan seeds = SeedPlan::from_root(config.seed);
  const auto& schedule = config.schedule;
  json& metrics = run.metrics;
  metrics = {{"method", to_string(config.method)}};
  std::vector<PredictiveDistribution> test_preds;
  std::vector<std::size_t> test_labels;
  std::optional<MetricsReport> clean_report;

  try {
    stage("config", [&] { config.validate(); });

    auto t = Clock::now();
    const SplitDataset data = stage("data", [&] { return prepare_data(config); });
    wall["data"] = seconds_since(t);
    doc["dataset"] = {{"provenance", data.train.provenance},
                      {"train", data.train.size()},
                      {"validation", data.validation.size()},
                      {"test", data.test.size()},
                      {"classes", data.train.class_count}};

    t = Clock::now();
    run.outcome = stage("train", [&] {
      BatchPerturber perturb;
      if (config.adversarial_training) perturb = fgsm_perturber(config.attack);
      return train_method(config, data, perturb);
    });
    wall["train"] = seconds_since(t);
    const TrainedPredictor& predictor = run.outcome.predictor;

    t = Clock::now();
    const std::uint64_t val_seed = derive_seed(seeds.eval, "validation");
    const std::uint64_t test_seed = derive_seed(seeds.eval, "test");
    const auto val_records = stage("tune", [&] {
      return make_records(predictor.predict(data.validation.inputs, schedule.eval_mc_samples,
                                            val_seed),
                          data.validation.labels);
    });
    run.threshold = tune_threshold(val_records);
    metrics["threshold"] = run.threshold;
    metrics["validation"] = to_json(compute_metrics(val_records, run.threshold, config.ece_bins));

    test_labels = data.test.labels;
    test_preds = stage("evaluate", [&] {
      return predictor.predict(data.test.inputs, schedule.eval_mc_samples, test_seed);
    });
    clean_report = stage("evaluate", [&] {
      return compute_metrics(make_records(test_preds, test_labels), run.threshold,
                             config.ece_bins);
    });
    metrics["clean"] = to_json(*clean_report);

    if (config.flip) {
      metrics["flip"] = stage("flip", [&] {
        if (data.test.class_count != 2) throw std::invalid_argument("flip evaluation needs a binary task");
        return to_json(flip_eval(test_preds, data.test.labels, run.threshold, config.ece_bins));
      });
    }
    if (config.evaluate_ood) {
      metrics["ood"] = stage("ood", [&] {
        CorruptionConfig cc = config.corruption;
        cc.seed = seeds.corruption;
        const Dataset corrupted = gaussian_corrupt(data.test, cc);
        auto report = to_json(compute_metrics(
            make_records(predictor.predict(corrupted.inputs, schedule.eval_mc_samples, test_seed),
                         corrupted.labels),
            run.threshold, config.ece_bins));
        report["sigma"] = cc.sigma;
        return report;
      });
    }
    if (config.evaluate_adversarial) {
      metrics["adversarial"] = stage("adversarial", [&] {
        const Tensor attacked = fgsm(predictor, data.test.inputs, data.test.labels, config.attack);
        auto report = to_json(compute_metrics(
            make_records(predictor.predict(attacked, schedule.eval_mc_samples, test_seed),
                         data.test.labels),
            run.threshold, config.ece_bins));
        report["epsilon"] = config.attack.epsilon;
        report["clean_error"] = clean_report->error;
        return report;
      });
    }
    wall["evaluate"] = seconds_since(t);

    json digests = json::array();
    for (auto c : predictor.checksums()) digests.push_back(hex64(c));
    metrics["checkpoint_digests"] = digests;
    if (predictor.calibration) metrics["calibration"] = to_json(*predictor.calibration);
  } catch (const StageError& e) {
    run.ok = false;
    run.failed_stage = e.stage();
    doc["status"] = "failed";
    doc["failed_stage"] = e.stage();
    doc["error"] = e.what();
  }

  json epochs = json::array();
  for (const auto& r : run.outcome.epochs) epochs.push_back(epoch_json(r));
  doc["epochs"] = std::move(epochs);
  doc["pretrain_losses"] = run.outcome.pretrain_losses;
  doc["diverged"] = run.outcome.diverged;
  doc["threshold"] = run.threshold;
  doc["metrics"] = metrics;
  if (metrics.contains("checkpoint_digests")) doc["checkpoint_digests"] = metrics["checkpoint_digests"];
  wall["total"] = seconds_since(t_total);
  doc["wall_times"] = wall;

  if (options.write_files) {
    const std::filesystem::path dir = config.output_dir;
    std::filesystem::create_directories(dir);
    write_text(dir / "manifest.json", doc.dump(2) + "\n");
    write_text(dir / "metrics.json", metrics_text(metrics));
    write_text(dir / "epochs.csv", epoch_report_csv(run.outcome.epochs));
    const auto& predictor = run.outcome.predictor;
    if (clean_report) {
      write_text(dir / "predictions.csv", predictions_csv(test_preds, test_labels));
      write_text(dir / "histogram.csv", histogram_csv(*clean_report));
    }
    if (predictor.model) save_checkpoint(dir / "checkpoint.json", *predictor.model, config.seed);
    if (predictor.ensemble) {
      for (std::size_t m = 0; m < predictor.ensemble->members.size(); ++m) {
        save_checkpoint(dir / ("checkpoint_member_" + std::to_string(m) + ".json"),
                        predictor.ensemble->members[m], predictor.ensemble->seeds[m]);
      }
    }
  }
  return run;
}

std::string compare_table(std::span<const std::string> methods,
                          std::span<const json> reports) {
  const std::vector<std::pair<std::string, std::string>> rows{
      {"error", "error"}, {"uA", "uA"},           {"uAUC", "uAUC"},
      {"ECE", "ece"},     {"wasserstein", "wasserstein"}, {"corr", "corr"},
      {"corr_binary", "corr_binary"}};
  std::ostringstream out;
  out.precision(6);
  out << "metric";
  for (const auto& m : methods) out << ',' << m;
  out << '\n';
  auto cell = [](const json& v) -> std::string {
    if (v.is_null()) return "nan";
    std::ostringstream s;
    s.precision(6);
    s << v.get<double>();
    return s.str();
  };
  for (const auto& [label, key] : rows) {
    out << label;
    for (const auto& r : reports) {
      out << ',' << (r.contains("clean") ? cell(r["clean"][key]) : std::string("nan"));
    }
    out << '\n';
  }
  out << "threshold";
  for (const auto& r : reports) out << ',' << (r.contains("threshold") ? cell(r["threshold"]) : "nan");
  out << '\n';
  if (!reports.empty() && reports.front().contains("flip")) {
    for (const char* key : {"error_with_flip", "flip_gain"}) {
      out << key;
      for (const auto& r : reports) out << ',' << (r.contains("flip") ? cell(r["flip"][key]) : "nan");
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace euat
