#include "euat/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace euat {

using nlohmann::json;

json checkpoint_to_json(const MlpModel& model, std::uint64_t seed) {
  json layers = json::array();
  for (const auto& layer : model.layers()) {
    layers.push_back({{"in", layer.in_width()},
                      {"out", layer.out_width()},
                      {"activation", layer.activation == Activation::relu ? "relu" : "identity"},
                      {"weights", layer.weights.data()},
                      {"bias", layer.bias.data()}});
  }
  return {{"format", "euat-mlp"},
          {"version", kCheckpointVersion},
          {"dropout_rate", model.dropout_rate()},
          {"seed", seed},
          {"layers", std::move(layers)}};
}

Checkpoint checkpoint_from_json(const json& doc) {
  if (doc.value("format", "") != "euat-mlp") {
    throw std::runtime_error("checkpoint: not an euat-mlp document");
  }
  if (doc.at("version").get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + doc.at("version").dump());
  }
  std::vector<DenseLayer> layers;
  for (const auto& entry : doc.at("layers")) {
    const auto in = entry.at("in").get<std::size_t>();
    const auto out = entry.at("out").get<std::size_t>();
    const auto act = entry.at("activation").get<std::string>();
    if (act != "relu" && act != "identity") {
      throw std::runtime_error("checkpoint: unknown activation '" + act + "'");
    }
    layers.push_back({Tensor({out, in}, entry.at("weights").get<std::vector<double>>()),
                      Tensor({out}, entry.at("bias").get<std::vector<double>>()),
                      act == "relu" ? Activation::relu : Activation::identity});
  }
  return {MlpModel(std::move(layers), doc.at("dropout_rate").get<double>()),
          doc.at("seed").get<std::uint64_t>()};
}

void save_checkpoint(const std::filesystem::path& path, const MlpModel& model, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  out << checkpoint_to_json(model, seed).dump() << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("checkpoint: cannot read " + path.string());
  return checkpoint_from_json(json::parse(in));
}

}  // namespace euat
