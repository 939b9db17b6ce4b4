#include "euat/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace euat {

using nlohmann::json;

namespace {

std::string attack_loss_name(AttackLoss loss) { return loss == AttackLoss::ce ? "ce" : "euat"; }

AttackLoss parse_attack_loss(const std::string& name) {
  if (name == "ce") return AttackLoss::ce;
  if (name == "euat") return AttackLoss::euat;
  throw std::invalid_argument("unknown attack loss '" + name + "'");
}

void reject_unknown(const json& doc, const std::set<std::string>& known, const std::string& where) {
  if (!doc.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, value] : doc.items()) {
    if (!known.count(key)) throw std::invalid_argument("config: unknown key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& doc, const char* key, T& field) {
  if (doc.contains(key)) field = doc.at(key).get<T>();
}

}  // namespace

Method parse_method(const std::string& name) {
  if (name == "euat") return Method::euat;
  if (name == "ce") return Method::ce;
  if (name == "ce_pe") return Method::ce_pe;
  if (name == "calibrated_ce") return Method::calibrated_ce;
  if (name == "ensemble") return Method::ensemble;
  throw std::invalid_argument("unknown method '" + name + "'");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::euat: return "euat";
    case Method::ce: return "ce";
    case Method::ce_pe: return "ce_pe";
    case Method::calibrated_ce: return "calibrated_ce";
    case Method::ensemble: return "ensemble";
  }
  return "unknown";
}

void ExperimentConfig::validate() const {
  schedule.validate();
  attack.validate();
  if (model.dropout_rate < 0.0 || model.dropout_rate >= 1.0) {
    throw std::invalid_argument("config: dropout rate must lie in [0, 1)");
  }
  if (ce_pe_lambda < 0.0) throw std::invalid_argument("config: ce_pe lambda must be non-negative");
  if (ensemble_members == 0) throw std::invalid_argument("config: ensemble needs members");
  if (corruption.sigma < 0.0) throw std::invalid_argument("config: corruption sigma must be non-negative");
  if (ece_bins == 0) throw std::invalid_argument("config: ece_bins must be positive");
  if (dataset.source != "generator" && dataset.source != "idx") {
    throw std::invalid_argument("config: dataset source must be 'generator' or 'idx'");
  }
  if (dataset.validation_fraction <= 0.0 || dataset.test_fraction <= 0.0 ||
      dataset.validation_fraction + dataset.test_fraction >= 1.0) {
    throw std::invalid_argument("config: split fractions must be positive and sum below 1");
  }
}

json to_json(const ExperimentConfig& c) {
  const auto& g = c.dataset.generator;
  const auto& s = c.schedule;
  return {
      {"dataset",
       {{"source", c.dataset.source},
        {"kind", to_string(g.kind)},
        {"n", g.n},
        {"noise", g.noise},
        {"classes", g.classes},
        {"dims", g.dims},
        {"idx_images", c.dataset.idx_images},
        {"idx_labels", c.dataset.idx_labels},
        {"binary_positive",
         c.dataset.binary_positive ? json(*c.dataset.binary_positive) : json(nullptr)},
        {"validation_fraction", c.dataset.validation_fraction},
        {"test_fraction", c.dataset.test_fraction}}},
      {"model", {{"hidden", c.model.hidden}, {"dropout_rate", c.model.dropout_rate}}},
      {"method", to_string(c.method)},
      {"schedule",
       {{"pretrain_epochs", s.pretrain_epochs},
        {"euat_epochs", s.euat_epochs},
        {"pretrain_lr", s.pretrain_lr},
        {"euat_lr", s.euat_lr},
        {"momentum", s.momentum},
        {"weight_decay", s.weight_decay},
        {"batch_size", s.batch_size},
        {"selection_metric", to_string(s.selection)},
        {"train_mc_samples", s.train_mc_samples},
        {"eval_mc_samples", s.eval_mc_samples},
        {"max_consecutive_skips", s.max_consecutive_skips}}},
      {"ce_pe_lambda", c.ce_pe_lambda},
      {"ensemble_members", c.ensemble_members},
      {"ensemble_split_budget", c.ensemble_split_budget},
      {"ece_bins", c.ece_bins},
      {"adversarial_training", c.adversarial_training},
      {"evaluate_adversarial", c.evaluate_adversarial},
      {"attack",
       {{"epsilon", c.attack.epsilon},
        {"clip_min", c.attack.clip_min},
        {"clip_max", c.attack.clip_max},
        {"loss", attack_loss_name(c.attack.loss)}}},
      {"evaluate_ood", c.evaluate_ood},
      {"corruption", {{"sigma", c.corruption.sigma}}},
      {"flip", c.flip},
      {"seed", c.seed},
      {"output_dir", c.output_dir}};
}

ExperimentConfig config_from_json(const json& doc) {
  ExperimentConfig c;
  reject_unknown(doc,
                 {"dataset", "model", "method", "schedule", "ce_pe_lambda", "ensemble_members",
                  "ensemble_split_budget", "ece_bins", "adversarial_training",
                  "evaluate_adversarial", "attack", "evaluate_ood", "corruption", "flip", "seed",
                  "output_dir"},
                 "");
  try {
    if (doc.contains("dataset")) {
      const auto& d = doc.at("dataset");
      reject_unknown(d,
                     {"source", "kind", "n", "noise", "classes", "dims", "idx_images",
                      "idx_labels", "binary_positive", "validation_fraction", "test_fraction"},
                     "dataset.");
      read(d, "source", c.dataset.source);
      if (d.contains("kind")) c.dataset.generator.kind = parse_dataset_kind(d.at("kind"));
      read(d, "n", c.dataset.generator.n);
      read(d, "noise", c.dataset.generator.noise);
      read(d, "classes", c.dataset.generator.classes);
      read(d, "dims", c.dataset.generator.dims);
      read(d, "idx_images", c.dataset.idx_images);
      read(d, "idx_labels", c.dataset.idx_labels);
      if (d.contains("binary_positive") && !d.at("binary_positive").is_null()) {
        c.dataset.binary_positive = d.at("binary_positive").get<std::size_t>();
      }
      read(d, "validation_fraction", c.dataset.validation_fraction);
      read(d, "test_fraction", c.dataset.test_fraction);
    }
    if (doc.contains("model")) {
      const auto& m = doc.at("model");
      reject_unknown(m, {"hidden", "dropout_rate"}, "model.");
      read(m, "hidden", c.model.hidden);
      read(m, "dropout_rate", c.model.dropout_rate);
    }
    if (doc.contains("method")) c.method = parse_method(doc.at("method"));
    if (doc.contains("schedule")) {
      const auto& s = doc.at("schedule");
      reject_unknown(s,
                     {"pretrain_epochs", "euat_epochs", "pretrain_lr", "euat_lr", "momentum",
                      "weight_decay", "batch_size", "selection_metric", "train_mc_samples",
                      "eval_mc_samples", "max_consecutive_skips"},
                     "schedule.");
      read(s, "pretrain_epochs", c.schedule.pretrain_epochs);
      read(s, "euat_epochs", c.schedule.euat_epochs);
      read(s, "pretrain_lr", c.schedule.pretrain_lr);
      // The EUAT rate follows the pre-training rate unless given explicitly.
      c.schedule.euat_lr = c.schedule.pretrain_lr / 1000.0;
      read(s, "euat_lr", c.schedule.euat_lr);
      read(s, "momentum", c.schedule.momentum);
      read(s, "weight_decay", c.schedule.weight_decay);
      read(s, "batch_size", c.schedule.batch_size);
      if (s.contains("selection_metric")) {
        c.schedule.selection = parse_selection_metric(s.at("selection_metric"));
      }
      read(s, "train_mc_samples", c.schedule.train_mc_samples);
      read(s, "eval_mc_samples", c.schedule.eval_mc_samples);
      read(s, "max_consecutive_skips", c.schedule.max_consecutive_skips);
    }
    read(doc, "ce_pe_lambda", c.ce_pe_lambda);
    read(doc, "ensemble_members", c.ensemble_members);
    read(doc, "ensemble_split_budget", c.ensemble_split_budget);
    read(doc, "ece_bins", c.ece_bins);
    read(doc, "adversarial_training", c.adversarial_training);
    read(doc, "evaluate_adversarial", c.evaluate_adversarial);
    if (doc.contains("attack")) {
      const auto& a = doc.at("attack");
      reject_unknown(a, {"epsilon", "clip_min", "clip_max", "loss"}, "attack.");
      read(a, "epsilon", c.attack.epsilon);
      read(a, "clip_min", c.attack.clip_min);
      read(a, "clip_max", c.attack.clip_max);
      if (a.contains("loss")) c.attack.loss = parse_attack_loss(a.at("loss"));
    }
    read(doc, "evaluate_ood", c.evaluate_ood);
    if (doc.contains("corruption")) {
      const auto& k = doc.at("corruption");
      reject_unknown(k, {"sigma"}, "corruption.");
      read(k, "sigma", c.corruption.sigma);
    }
    read(doc, "flip", c.flip);
    read(doc, "seed", c.seed);
    read(doc, "output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

}  // namespace euat
