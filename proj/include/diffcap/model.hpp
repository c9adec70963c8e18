// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "diffcap/config.hpp"
#include "diffcap/denoiser.hpp"
#include "diffcap/schedule.hpp"
#include "diffcap/textcodec.hpp"

namespace diffcap {

// Everything needed to train or caption: schedule, vocabulary, embedding
// table (shared with the lm-head), and the denoiser.
struct CaptionModel {
  Config cfg;
  NoiseSchedule schedule;
  Vocab vocab;
  EmbeddingTable table;
  Denoiser denoiser;
};

DenoiserConfig denoiser_config(const Config& cfg, int vocab_size, int d_clip);

CaptionModel make_caption_model(const Config& cfg, Vocab vocab, int d_clip);

// Tensor blob: `<stem>.bin` holds little-endian float32 values of every
// tensor back to back; `<stem>.json` lists {name, shape, offset} in
// alphabetical name order plus caller metadata under "meta".
void write_tensor_blob(const std::filesystem::path& stem, const std::map<std::string, Mat>& tensors,
                       const nlohmann::json& meta);
std::map<std::string, Mat> read_tensor_blob(const std::filesystem::path& stem, nlohmann::json* meta);

// Checkpoint directory layout: model.bin, model.json, vocab.txt.
// The embedding table is stored as tensor "embedding".
void save_checkpoint(const CaptionModel& model, const std::filesystem::path& dir,
                     const nlohmann::json& extra_meta = nlohmann::json::object());
CaptionModel load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta = nullptr);

}  // namespace diffcap
