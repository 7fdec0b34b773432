#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fisherscope/model.hpp"

namespace fisherscope {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMetadata {
  std::uint64_t creation_seed = 0;
  std::string provenance;
};

struct Checkpoint {
  Model model;
  CheckpointMetadata metadata;
};

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const CheckpointMetadata& metadata = {});

/// Bit-exact inverse of save_checkpoint. Throws VersionMismatch, CorruptFile,
/// or ShapeDisagreement (arrays that do not fit the embedded config).
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fisherscope
