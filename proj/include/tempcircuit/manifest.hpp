#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tempcircuit {

// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct ArtifactRecord {
  std::string path;
  std::string sha256;
};

// What a command read, what it wrote, and how to run it again.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds;
  std::vector<ArtifactRecord> inputs;
  std::vector<ArtifactRecord> outputs;  // paths relative to the output directory

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& out_dir, const std::filesystem::path& relative);

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

// Writes `text` to `path` through a temporary sibling and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);
std::string read_file(const std::filesystem::path& path);

}  // namespace tempcircuit
