#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "imamoe/model.hpp"
#include "imamoe/schema.hpp"
#include "imamoe/train.hpp"

namespace imamoe {

// Layout: 8-byte magic "IMAMOECK", u32 version, u64 header length, a JSON
// header (config, schema, free-form metadata, optimizer scalars and a tensor
// directory of name/rows/cols), then every tensor as row-major little-endian
// float64 in directory order. Values round-trip bit for bit.

struct Checkpoint {
  ModelConfig config;
  MeasureSchema schema;
  nlohmann::json metadata;
  ModelParams params;
  std::optional<TrainState> state;
};

void save_checkpoint(const std::filesystem::path& path, ModelParams& params,
                     const ModelConfig& config, const MeasureSchema& schema,
                     const nlohmann::json& metadata, const TrainState* state = nullptr);

/// Rebuilds the parameter structure from the stored config and schema, then
/// fills it. Throws DataError on any name or shape mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace imamoe
