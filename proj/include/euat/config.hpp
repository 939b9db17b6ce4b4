#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "euat/dataset.hpp"
#include "euat/robustness.hpp"
#include "euat/trainer.hpp"

namespace euat {

enum class Method { euat, ce, ce_pe, calibrated_ce, ensemble };

Method parse_method(const std::string& name);
std::string to_string(Method method);

struct DatasetSpec {
  std::string source = "generator";  // "generator" or "idx"
  GeneratorSpec generator;
  std::string idx_images;
  std::string idx_labels;
  std::optional<std::size_t> binary_positive;  // one-vs-rest reduction
  double validation_fraction = 0.1;
  double test_fraction = 0.2;
};

struct ModelSpec {
  std::vector<std::size_t> hidden{32, 32};
  double dropout_rate = 0.3;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelSpec model;
  Method method = Method::euat;
  TrainingSchedule schedule;
  double ce_pe_lambda = 1.0;
  std::size_t ensemble_members = 5;
  bool ensemble_split_budget = true;
  std::size_t ece_bins = 15;

  bool adversarial_training = false;
  bool evaluate_adversarial = false;
  AttackConfig attack;
  bool evaluate_ood = false;
  CorruptionConfig corruption;  // seed is overridden by the root seed's "corruption" substream
  bool flip = false;

  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  void validate() const;
};

/// Every field, defaults included.
nlohmann::json to_json(const ExperimentConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace euat
