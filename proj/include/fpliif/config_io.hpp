#pragma once

#include <filesystem>

#include <json.hpp>

#include "fpliif/data.hpp"
#include "fpliif/loss.hpp"
#include "fpliif/model.hpp"
#include "fpliif/train.hpp"

namespace fpliif {

using Json = nlohmann::json;

// JSON mirrors the struct field names. Reading overlays the keys that are
// present onto the existing value and rejects unknown keys with ConfigError.
void to_json(Json& j, const ModelConfig& c);
void from_json(const Json& j, ModelConfig& c);
void to_json(Json& j, const LossConfig& c);
void from_json(const Json& j, LossConfig& c);
void to_json(Json& j, const Range& r);
void from_json(const Json& j, Range& r);
void to_json(Json& j, const AugmentPolicy& p);
void from_json(const Json& j, AugmentPolicy& p);
void to_json(Json& j, const TrainConfig& c);
void from_json(const Json& j, TrainConfig& c);

/// Top-level config file: {"model": {...}, "train": {...}}, both optional.
struct RunFileConfig {
  ModelConfig model;
  TrainConfig train;
};

RunFileConfig read_config_file(const std::filesystem::path& path);

}  // namespace fpliif
