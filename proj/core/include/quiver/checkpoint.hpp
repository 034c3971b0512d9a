#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "quiver/mlp.hpp"

namespace quiver {

inline constexpr const char* kCheckpointFormat = "quiver-checkpoint/1";

nlohmann::json spec_to_json(const MlpSpec& spec);
MlpSpec spec_from_json(const nlohmann::json& j);

struct Checkpoint {
  Mlp model;
  nlohmann::json manifest;
};

/// Writes `<stem>.manifest.json` (spec plus caller metadata such as the train
/// config and epoch) and `<stem>.f32bin` (weights then bias, layer by layer,
/// row-major). Parameters are rounded to float32.
void save_checkpoint(const std::filesystem::path& stem, const Mlp& mlp,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace quiver
