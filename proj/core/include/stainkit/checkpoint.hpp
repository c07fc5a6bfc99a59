#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "stainkit/pidr.hpp"

namespace stainkit {

/// "STPC", u32 version, u32 length + JSON model config, u32 record count,
/// then per record: u32 length + name, tensor container. Records are in
/// lexicographic name order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string model_config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys are an error.
ModelConfig model_config_from_json(std::string_view json);

void write_checkpoint(std::ostream& out, const PidrModel& model);
/// Rebuilds the model from the stored config and loads every tensor, checking
/// names and shapes against that config.
PidrModel read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const PidrModel& model);
PidrModel load_checkpoint(const std::filesystem::path& path);

}  // namespace stainkit
