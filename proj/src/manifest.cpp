// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/manifest.hpp"

#include <openssl/evp.h>

#include <array>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iterator>

#include "diffcap/error.hpp"

namespace diffcap {

std::string git_blob_hash(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot read " + file.string());
  const std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(body.size()) + '\0';

  const std::string payload = header + body;
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(payload.data(), payload.size(), digest.data(), &len, EVP_sha1(), nullptr) != 1)
    throw Error("sha1 digest failed");

  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::hash_input(const std::filesystem::path& file) {
  input_hashes[file.string()] = git_blob_hash(file);
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config;
  j["seed"] = seed;
  j["inputs"] = input_hashes;
  j["started_at"] = started_at;
  j["outputs"] = outputs;
  return j;
}

void RunManifest::write(const std::filesystem::path& dir, bool replace) const {
  std::filesystem::create_directories(dir);
  const auto path = dir / "manifest.json";
  if (!replace && std::filesystem::exists(path))
    throw LoadError(LoadError::Kind::kIo, path.string() + " already exists");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(LoadError::Kind::kIo, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

}  // namespace diffcap
