#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fisherscope/tensor.hpp"

namespace fisherscope {

/// Self-describing container used for checkpoints and Fisher estimates.
///
///     FISHERSCOPE <kind> <version>\n
///     <manifest byte count>\n
///     <JSON manifest>
///     <raw little-endian float64 blocks>
///
/// The manifest's "blocks" array lists name, shape, byte offset (relative to
/// the first block) and element count for each block, in file order.
struct BlobFile {
  std::string kind;
  int version = 0;
  nlohmann::json manifest;
  std::vector<std::string> names;
  std::vector<Tensor> blocks;
};

void write_blob_file(const std::filesystem::path& path, const BlobFile& file);

/// Throws IoError, CorruptFile, or VersionMismatch (when `expected_version`
/// differs from the stored one). `expected_kind` must match.
BlobFile read_blob_file(const std::filesystem::path& path, const std::string& expected_kind,
                        int expected_version);

}  // namespace fisherscope
