#pragma once

#include "tempcircuit/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace tempcircuit {

// Checkpoint layout (all integers little-endian):
//
//   offset 0   4 bytes   magic "TCKP"
//   offset 4   u32       format version (1)
//   offset 8   u64       header length N
//   offset 16  N bytes   JSON header: {"format_version", "config", "seed",
//                        "dtype": "f32le", "params": [{"name", "size"}]}
//   then                 every parameter block, in visit_params order,
//                        as IEEE-754 binary32 little-endian, row-major.
inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> checkpoint_bytes(const Weights& w);
Weights checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Weights& w);
Weights load_checkpoint(const std::filesystem::path& path);

}  // namespace tempcircuit
