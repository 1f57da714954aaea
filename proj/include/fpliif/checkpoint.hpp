#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "fpliif/model.hpp"

namespace fpliif {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "FPLF", u32 version, u64 header length (both little-endian), a
/// UTF-8 JSON header {config, tensors: [{name, shape, dtype, offset}], meta},
/// then the parameters as little-endian f32 (offsets count from the payload
/// start). 64-bit models are narrowed to f32 on save.
template <typename Scalar>
void save_checkpoint(const Model<Scalar>& model, const std::filesystem::path& path,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Throws FormatError on bad magic/version/header and CorruptionError on
/// truncation or tensor records that disagree with the configured shapes.
template <typename Scalar>
Model<Scalar> load_checkpoint(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

// Header JSON only (config, tensor table, meta).
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

}  // namespace fpliif
