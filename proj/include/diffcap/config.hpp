// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffcap/denoiser.hpp"
#include "diffcap/diffusion.hpp"
#include "diffcap/schedule.hpp"

namespace diffcap {

enum class LrKind { kConstant, kLinear, kLog, kCosine };
enum class LambdaKind { kConstant, kDynamic };
enum class Renoise { kDdim, kZero };

LrKind parse_lr_kind(std::string_view name);
LambdaKind parse_lambda_kind(std::string_view name);
Renoise parse_renoise(std::string_view name);
std::string_view to_string(LrKind k);
std::string_view to_string(LambdaKind k);
std::string_view to_string(Renoise r);

struct GuidanceConfig {
  bool enabled = false;
  double p_uncond = 0.2;
  double w = 0.3;
};

struct TrainConfig {
  int batch_size = 8;
  int epochs_max = 15;
  LrKind lr_kind = LrKind::kLinear;
  double lr_start = 1e-4;
  double lr_end = 5e-5;
  LambdaKind lambda_kind = LambdaKind::kConstant;
  double lambda_value = 0.3;
  double dynamic_C = 1.0;
  GuidanceConfig guidance;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;  // global-norm clip; 0 disables
  bool early_stop = true;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int bleu_every = 1;  // epochs between validation BLEU evaluations; 0 disables

  void validate() const;
};

struct GenConfig {
  int stages = 5;
  bool deterministic = true;
  double w = 0.0;
  bool dedup = true;
  bool reembed_between_stages = false;
  Renoise renoise = Renoise::kZero;

  void validate() const;
};

struct ModelSection {
  int layers = 4;
  int heads = 2;
  int d_word = 64;
  int ff_mult = 4;
  Fusion fusion = Fusion::kConcat;
  int max_len = 16;
};

struct EmbeddingSection {
  bool trainable = false;
};

struct DataSection {
  std::string jsonl;
  std::string features;
  std::string heldout;  // optional key list; otherwise val_fraction split
  std::string vocab;    // optional; otherwise built from training captions
  double val_fraction = 0.2;
};

// Whole-run configuration. JSON layout mirrors the sections:
// {"schedule": {...}, "diffusion": {...}, "loss": {...}, "model": {...},
//  "embedding": {...}, "guidance": {...}, "train": {...}, "infer": {...},
//  "data": {...}}
struct Config {
  ScheduleConfig schedule;
  DiffusionConfig diffusion;  // loss.x1_every_step lives here too
  ModelSection model;
  EmbeddingSection embedding;
  TrainConfig train;  // train.guidance mirrors the "guidance" section
  GenConfig infer;
  DataSection data;

  void validate() const;
  // Guidance weight applied at generation (0 unless guidance is enabled).
  double generation_w() const { return train.guidance.enabled ? train.guidance.w : 0.0; }
  GenConfig gen_config() const;
};

// Unknown keys are rejected with a ConfigError naming the dotted key.
Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& cfg);
Config load_config(const std::filesystem::path& path);

// "section.key=value"; value is parsed as JSON when possible, else string.
void apply_override(nlohmann::json& j, std::string_view assignment);

// DIFFCAP_SEED, when set, replaces train.seed.
void apply_env_seed(Config& cfg);

}  // namespace diffcap
