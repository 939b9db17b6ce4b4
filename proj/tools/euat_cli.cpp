// Command-line front end: train / evaluate / flip-eval / ood-eval /
// attack-eval / compare / replay.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "euat/checkpoint.hpp"
#include "euat/config.hpp"
#include "euat/experiment.hpp"
#include "euat/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTraining = 4;

/// Flags that override the config file. Unset flags leave the file (or the
/// built-in default) alone.
struct Overrides {
  std::string config_path;
  std::optional<std::string> method, dataset_kind, selection, output_dir, idx_images, idx_labels;
  std::optional<std::size_t> n, classes, dims, pretrain_epochs, euat_epochs, batch_size,
      train_mc, eval_mc, members, binary_positive;
  std::optional<double> noise, lr, euat_lr, dropout, lambda, epsilon, sigma, weight_decay;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App& app) {
    app.add_option("-c,--config", config_path, "JSON experiment config");
    app.add_option("--method", method, "euat | ce | ce_pe | calibrated_ce | ensemble");
    app.add_option("--dataset", dataset_kind, "two_moons | gaussian_blobs | rings");
    app.add_option("--idx-images", idx_images, "IDX image file (switches the source to idx)");
    app.add_option("--idx-labels", idx_labels, "IDX label file");
    app.add_option("--n", n, "generated sample count");
    app.add_option("--noise", noise, "generator noise");
    app.add_option("--classes", classes, "generator class count");
    app.add_option("--dims", dims, "blob dimensionality");
    app.add_option("--binary-positive", binary_positive, "one-vs-rest positive class");
    app.add_option("--pretrain-epochs", pretrain_epochs);
    app.add_option("--euat-epochs", euat_epochs);
    app.add_option("--lr", lr, "pre-training learning rate");
    app.add_option("--euat-lr", euat_lr, "EUAT learning rate (default lr / 1000)");
    app.add_option("--weight-decay", weight_decay);
    app.add_option("--batch-size", batch_size);
    app.add_option("--dropout", dropout);
    app.add_option("--train-mc", train_mc, "MC passes per EUAT batch");
    app.add_option("--mc-samples", eval_mc, "MC passes at evaluation");
    app.add_option("--selection", selection, "uA | uAUC | corr | wasserstein | error");
    app.add_option("--lambda", lambda, "CE+PE entropy weight");
    app.add_option("--members", members, "ensemble size");
    app.add_option("--epsilon", epsilon, "FGSM L-inf budget");
    app.add_option("--sigma", sigma, "Gaussian corruption stddev");
    app.add_option("--seed", seed, "root seed");
    app.add_option("-o,--out", output_dir, "output directory");
  }

  euat::ExperimentConfig resolve() const {
    euat::ExperimentConfig c =
        config_path.empty() ? euat::config_from_json(nlohmann::json::object())
                            : euat::load_config(config_path);
    if (method) c.method = euat::parse_method(*method);
    if (dataset_kind) c.dataset.generator.kind = euat::parse_dataset_kind(*dataset_kind);
    if (idx_images) {
      c.dataset.source = "idx";
      c.dataset.idx_images = *idx_images;
    }
    if (idx_labels) c.dataset.idx_labels = *idx_labels;
    if (n) c.dataset.generator.n = *n;
    if (noise) c.dataset.generator.noise = *noise;
    if (classes) c.dataset.generator.classes = *classes;
    if (dims) c.dataset.generator.dims = *dims;
    if (binary_positive) c.dataset.binary_positive = *binary_positive;
    if (pretrain_epochs) c.schedule.pretrain_epochs = *pretrain_epochs;
    if (euat_epochs) c.schedule.euat_epochs = *euat_epochs;
    if (lr) {
      c.schedule.pretrain_lr = *lr;
      c.schedule.euat_lr = *lr / 1000.0;
    }
    if (euat_lr) c.schedule.euat_lr = *euat_lr;
    if (weight_decay) c.schedule.weight_decay = *weight_decay;
    if (batch_size) c.schedule.batch_size = *batch_size;
    if (dropout) c.model.dropout_rate = *dropout;
    if (train_mc) c.schedule.train_mc_samples = *train_mc;
    if (eval_mc) c.schedule.eval_mc_samples = *eval_mc;
    if (selection) c.schedule.selection = euat::parse_selection_metric(*selection);
    if (lambda) c.ce_pe_lambda = *lambda;
    if (members) c.ensemble_members = *members;
    if (epsilon) c.attack.epsilon = *epsilon;
    if (sigma) c.corruption.sigma = *sigma;
    if (seed) c.seed = *seed;
    if (output_dir) c.output_dir = *output_dir;
    c.validate();
    return c;
  }
};

int exit_code_for(const euat::RunManifest& run) {
  if (run.ok) return kExitOk;
  if (run.failed_stage == "config") return kExitConfig;
  if (run.failed_stage == "data") return kExitData;
  return kExitTraining;
}

int report(const euat::RunManifest& run, const euat::ExperimentConfig& config) {
  if (!run.ok) {
    std::cerr << "run failed in stage '" << run.failed_stage
              << "': " << run.document.value("error", "") << '\n';
  } else {
    std::cout << euat::metrics_text(run.metrics);
    std::cout << "outputs written to " << config.output_dir << '\n';
  }
  return exit_code_for(run);
}

int cmd_evaluate(const euat::ExperimentConfig& config, const std::string& checkpoint_path) {
  const auto checkpoint = euat::load_checkpoint(checkpoint_path);
  const auto data = euat::prepare_data(config);
  const auto seeds = euat::SeedPlan::from_root(config.seed);
  const std::size_t samples = config.schedule.eval_mc_samples;
  euat::TrainedPredictor predictor;
  predictor.model = checkpoint.model;
  const auto val = euat::make_records(
      predictor.predict(data.validation.inputs, samples, euat::derive_seed(seeds.eval, "validation")),
      data.validation.labels);
  const double threshold = euat::tune_threshold(val);
  const auto test = euat::make_records(
      predictor.predict(data.test.inputs, samples, euat::derive_seed(seeds.eval, "test")),
      data.test.labels);
  nlohmann::json out = {{"threshold", threshold},
                        {"clean", euat::to_json(euat::compute_metrics(test, threshold, config.ece_bins))}};
  std::cout << euat::metrics_text(out);
  return kExitOk;
}

int cmd_compare(euat::ExperimentConfig config, const std::vector<std::string>& methods) {
  std::vector<nlohmann::json> reports;
  const std::filesystem::path root = config.output_dir;
  int worst = kExitOk;
  for (const auto& name : methods) {
    config.method = euat::parse_method(name);
    config.output_dir = (root / name).string();
    const auto run = euat::run_experiment(config);
    if (!run.ok) {
      std::cerr << name << ": failed in stage '" << run.failed_stage << "'\n";
      worst = std::max(worst, exit_code_for(run));
    }
    reports.push_back(run.metrics);
  }
  const std::string table = euat::compare_table(methods, reports);
  std::filesystem::create_directories(root);
  std::ofstream(root / "compare.csv") << table;
  std::cout << table;
  return worst;
}

int cmd_replay(const std::string& manifest_path, const std::string& output_dir) {
  std::ifstream in(manifest_path);
  if (!in) {
    std::cerr << "cannot read " << manifest_path << '\n';
    return kExitConfig;
  }
  const auto manifest = nlohmann::json::parse(in);
  auto config = euat::config_from_json(manifest.at("config"));
  if (!output_dir.empty()) config.output_dir = output_dir;
  const auto run = euat::run_experiment(config);
  if (!run.ok) return exit_code_for(run);
  const std::string expected = euat::metrics_text(manifest.at("metrics"));
  const std::string actual = euat::metrics_text(run.metrics);
  if (expected != actual) {
    std::cerr << "replay: metrics differ from the manifest\n";
    return kExitTraining;
  }
  std::cout << "replay: metrics reproduced bit-exactly\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Error-driven uncertainty aware training laboratory"};
  app.require_subcommand(1);

  Overrides train_flags, flip_flags, ood_flags, attack_flags, compare_flags, eval_flags;
  auto* train = app.add_subcommand("train", "train one method and evaluate on the clean test split");
  train_flags.attach(*train);

  auto* evaluate = app.add_subcommand("evaluate", "evaluate a saved checkpoint on the config's dataset");
  eval_flags.attach(*evaluate);
  std::string checkpoint_path;
  evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();

  auto* flip = app.add_subcommand("flip-eval", "binary task: flip high-uncertainty predictions");
  flip_flags.attach(*flip);

  auto* ood = app.add_subcommand("ood-eval", "evaluate on a Gaussian-corrupted test split");
  ood_flags.attach(*ood);

  auto* attack = app.add_subcommand("attack-eval", "FGSM adversarial training and evaluation");
  attack_flags.attach(*attack);
  bool clean_training = false;
  attack->add_flag("--clean-training", clean_training, "train on clean data, attack only at test time");

  auto* compare = app.add_subcommand("compare", "run several methods on one config, side by side");
  compare_flags.attach(*compare);
  std::vector<std::string> methods{"euat", "ce"};
  compare->add_option("--methods", methods, "methods to compare");

  auto* replay = app.add_subcommand("replay", "re-run a manifest and check the metrics reproduce");
  std::string manifest_path, replay_out;
  replay->add_option("manifest", manifest_path, "manifest.json of a previous run")->required();
  replay->add_option("-o,--out", replay_out, "output directory for the replay");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      const auto config = train_flags.resolve();
      return report(euat::run_experiment(config), config);
    }
    if (*evaluate) return cmd_evaluate(eval_flags.resolve(), checkpoint_path);
    if (*flip) {
      auto config = flip_flags.resolve();
      config.flip = true;
      if (!config.dataset.binary_positive && config.dataset.generator.classes != 2 &&
          config.dataset.generator.kind != euat::DatasetKind::two_moons) {
        config.dataset.binary_positive = 0;
      }
      return report(euat::run_experiment(config), config);
    }
    if (*ood) {
      auto config = ood_flags.resolve();
      config.evaluate_ood = true;
      return report(euat::run_experiment(config), config);
    }
    if (*attack) {
      auto config = attack_flags.resolve();
      config.adversarial_training = !clean_training;
      config.evaluate_adversarial = true;
      return report(euat::run_experiment(config), config);
    }
    if (*compare) return cmd_compare(compare_flags.resolve(), methods);
    if (*replay) return cmd_replay(manifest_path, replay_out);
  } catch (const euat::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitTraining;
  }
  return kExitOk;
}
