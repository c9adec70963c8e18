// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "diffcap/config.hpp"
#include "diffcap/infer.hpp"

namespace diffcap {

// Output layout under --out.
namespace layout {
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kMetrics = "metrics.csv";
inline constexpr const char* kCheckpoints = "checkpoints";
inline constexpr const char* kCaptions = "captions.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kSentences = "sentences.csv";
inline constexpr const char* kSchedule = "schedule.tsv";
}  // namespace layout

struct ToyDataCommand {
  int scenes = 16;
  int dim = 16;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};
void run_make_toy_data(const ToyDataCommand& cmd);

// Reads a config file, applies "section.key=value" overrides, then the
// DIFFCAP_SEED environment variable, then the explicit seed.
Config resolve_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      std::optional<std::uint64_t> seed = std::nullopt);

struct TrainCommand {
  std::filesystem::path config;
  std::filesystem::path out;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  bool resume = false;
};

struct TrainSummary {
  int epochs_run = 0;
  int steps = 0;
  bool stopped_early = false;
  int best_epoch = 0;
  std::filesystem::path checkpoint;
};
TrainSummary run_train(const TrainCommand& cmd);

struct GenerateCommand {
  std::filesystem::path checkpoint;
  std::filesystem::path features;
  std::filesystem::path keys;     // records JSONL (key, feature_row)
  std::vector<std::string> only;  // optional subset of keys
  std::optional<int> stages;
  std::optional<bool> deterministic;
  std::optional<double> w;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};
// Returns the number of captions written.
size_t run_generate(const GenerateCommand& cmd);

struct EvaluateCommand {
  std::filesystem::path checkpoint;
  std::filesystem::path dataset;
  std::filesystem::path features;
  std::optional<int> stages;
  std::uint64_t seed = 0;
  std::filesystem::path out;
};
EvalReport run_evaluate(const EvaluateCommand& cmd);

// One "t<TAB>beta<TAB>alpha<TAB>alpha_bar" row per timestep, values in %.17g.
std::string schedule_table(const Config& cfg);

}  // namespace diffcap
