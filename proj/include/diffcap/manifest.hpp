// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace diffcap {

// Hex SHA-1 over "blob <size>\0" followed by the file bytes.
std::string git_blob_hash(const std::filesystem::path& file);

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> input_hashes;  // path -> blob hash
  std::string started_at;                            // ISO-8601 UTC
  std::map<std::string, std::string> outputs;        // role -> path

  void hash_input(const std::filesystem::path& file);
  nlohmann::json to_json() const;
  // Writes <dir>/manifest.json; refuses to overwrite an existing manifest
  // unless `replace` is set.
  void write(const std::filesystem::path& dir, bool replace = false) const;
};

std::string utc_timestamp();

}  // namespace diffcap
