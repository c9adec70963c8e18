// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "diffcap/tensor.hpp"

namespace diffcap {

struct CaptionRecord {
  std::string key;
  std::vector<std::string> captions;
  int feature_row = 0;

  bool operator==(const CaptionRecord&) const = default;
};

// CDLF container: "CDLF", uint32 count, uint32 dim, then count*dim
// little-endian float32 values, row-major.
struct FeatureFile {
  std::uint32_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> values;

  Vec row(std::uint32_t index) const;
};

FeatureFile read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureFile& features);

// One {"key", "captions", "feature_row"} object per line.
std::vector<CaptionRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<CaptionRecord>& records);

struct Dataset {
  std::vector<CaptionRecord> records;
  FeatureFile features;
};

// Validates every feature_row against the feature file.
Dataset load_dataset(const std::filesystem::path& jsonl_path,
                     const std::filesystem::path& feature_path);

struct ToyCorpusOptions {
  int num_scenes = 16;
  int captions_per_scene = 3;
  int dim = 16;
  std::uint64_t seed = 0;
  double heldout_fraction = 0.2;
};

struct ToyCorpusFiles {
  std::filesystem::path captions;  // captions.jsonl
  std::filesystem::path features;  // features.cdlf
  std::filesystem::path heldout;   // heldout.txt, one key per line
  std::filesystem::path vocab;     // vocab.txt
};

// Template captions "a <color> <animal> <verb>" (plus variants) with slot
// values fixed per scene; one record and one condition vector per scene.
// Condition vectors are orthogonal when num_scenes <= dim.
Dataset make_toy_dataset(const ToyCorpusOptions& opts, std::vector<std::string>* heldout_keys);
ToyCorpusFiles make_toy_corpus(const ToyCorpusOptions& opts, const std::filesystem::path& out_dir);

std::vector<std::string> read_key_list(const std::filesystem::path& path);

struct Split {
  std::vector<CaptionRecord> train;
  std::vector<CaptionRecord> val;
};

// Seeded shuffle, round(n * val_fraction) records to validation. Relative
// order is preserved within each side.
Split split(const std::vector<CaptionRecord>& records, double val_fraction, std::uint64_t seed);

// Validation = records whose key is listed; throws if either side is empty.
Split split_by_keys(const std::vector<CaptionRecord>& records,
                    const std::vector<std::string>& val_keys);

}  // namespace diffcap
