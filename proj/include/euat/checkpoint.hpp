#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "euat/nn.hpp"

namespace euat {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  MlpModel model;
  std::uint64_t seed = 0;
};

nlohmann::json checkpoint_to_json(const MlpModel& model, std::uint64_t seed);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const std::filesystem::path& path, const MlpModel& model, std::uint64_t seed);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace euat
