// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/model.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "diffcap/error.hpp"

namespace diffcap {

namespace {
constexpr const char* kFormat = "diffcap-tensors-1";
constexpr std::uint64_t kEmbeddingSeedSalt = 0x9e3779b97f4a7c15ull;
}

DenoiserConfig denoiser_config(const Config& cfg, int vocab_size, int d_clip) {
  DenoiserConfig d;
  d.layers = cfg.model.layers;
  d.heads = cfg.model.heads;
  d.d_word = cfg.model.d_word;
  d.d_clip = d_clip;
  d.ff_mult = cfg.model.ff_mult;
  d.fusion = cfg.model.fusion;
  d.L = cfg.model.max_len;
  d.vocab = vocab_size;
  d.text_slot = cfg.train.guidance.enabled;
  return d;
}

CaptionModel make_caption_model(const Config& cfg, Vocab vocab, int d_clip) {
  EmbeddingTable table =
      init_embedding_table(vocab.size(), cfg.model.d_word, cfg.train.seed ^ kEmbeddingSeedSalt);
  table.frozen = !cfg.embedding.trainable;
  const DenoiserConfig dc = denoiser_config(cfg, vocab.size(), d_clip);
  return CaptionModel{cfg, build_schedule(cfg.schedule), std::move(vocab), std::move(table),
                      Denoiser(dc, cfg.train.seed)};
}

void write_tensor_blob(const std::filesystem::path& stem, const std::map<std::string, Mat>& tensors,
                       const nlohmann::json& meta) {
  std::string bytes;
  nlohmann::json manifest;
  manifest["format"] = kFormat;
  manifest["dtype"] = "float32-le";
  manifest["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    manifest["tensors"].push_back(
        {{"name", name}, {"shape", {m.rows(), m.cols()}}, {"offset", bytes.size()}});
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m.data()[i]));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
    }
  }
  manifest["meta"] = meta;
  auto bin = stem;
  bin += ".bin";
  auto js = stem;
  js += ".json";
  std::ofstream ob(bin, std::ios::binary);
  if (!ob) throw LoadError(LoadError::Kind::kIo, "cannot write " + bin.string());
  ob.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  std::ofstream oj(js, std::ios::binary);
  if (!oj) throw LoadError(LoadError::Kind::kIo, "cannot write " + js.string());
  oj << manifest.dump(2) << '\n';
}

std::map<std::string, Mat> read_tensor_blob(const std::filesystem::path& stem, nlohmann::json* meta) {
  auto bin = stem;
  bin += ".bin";
  auto js = stem;
  js += ".json";
  std::ifstream ij(js);
  if (!ij) throw LoadError(LoadError::Kind::kIo, "cannot open " + js.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(ij);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::kParse, js.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != kFormat)
    throw LoadError(LoadError::Kind::kMagic, js.string() + ": unsupported tensor manifest");
  std::ifstream ib(bin, std::ios::binary);
  if (!ib) throw LoadError(LoadError::Kind::kIo, "cannot open " + bin.string());
  const std::string bytes(std::istreambuf_iterator<char>(ib), {});

  std::map<std::string, Mat> out;
  try {
    for (const auto& t : manifest.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const auto offset = t.at("offset").get<size_t>();
      if (offset + 4 * static_cast<size_t>(rows * cols) > bytes.size())
        throw LoadError(LoadError::Kind::kTruncated, bin.string() + ": tensor '" + name + "' truncated");
      Mat m(rows, cols);
      const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const std::uint32_t bits = static_cast<std::uint32_t>(p[4 * i]) |
                                   (static_cast<std::uint32_t>(p[4 * i + 1]) << 8) |
                                   (static_cast<std::uint32_t>(p[4 * i + 2]) << 16) |
                                   (static_cast<std::uint32_t>(p[4 * i + 3]) << 24);
        m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
      }
      out.emplace(name, std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::kParse, js.string() + ": " + e.what());
  }
  if (meta) *meta = manifest.value("meta", nlohmann::json::object());
  return out;
}

void save_checkpoint(const CaptionModel& model, const std::filesystem::path& dir,
                     const nlohmann::json& extra_meta) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw LoadError(LoadError::Kind::kIo, "cannot create " + dir.string());
  std::map<std::string, Mat> tensors = model.denoiser.params().tensors();
  tensors["embedding"] = model.table.matrix;
  nlohmann::json meta = extra_meta;
  meta["config"] = config_to_json(model.cfg);
  meta["d_clip"] = model.denoiser.config().d_clip;
  meta["vocab_size"] = model.vocab.size();
  meta["embedding_frozen"] = model.table.frozen;
  write_tensor_blob(dir / "model", tensors, meta);
  model.vocab.save(dir / "vocab.txt");
}

CaptionModel load_checkpoint(const std::filesystem::path& dir, nlohmann::json* meta_out) {
  nlohmann::json meta;
  auto tensors = read_tensor_blob(dir / "model", &meta);
  Config cfg;
  int d_clip = 0;
  try {
    cfg = config_from_json(meta.at("config"));
    d_clip = meta.at("d_clip").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(LoadError::Kind::kParse, dir.string() + ": bad checkpoint metadata: " + e.what());
  }
  Vocab vocab = Vocab::load(dir / "vocab.txt");
  auto it = tensors.find("embedding");
  if (it == tensors.end()) throw LoadError(LoadError::Kind::kParse, "checkpoint lacks embedding table");
  EmbeddingTable table{std::move(it->second), meta.value("embedding_frozen", true)};
  tensors.erase(it);
  if (table.vocab_size() != vocab.size())
    throw LoadError(LoadError::Kind::kParse, "embedding rows disagree with vocab size");
  ParamSet params;
  for (auto& [name, m] : tensors) params.set(name, std::move(m));
  Denoiser denoiser(denoiser_config(cfg, vocab.size(), d_clip), std::move(params));
  if (meta_out) *meta_out = meta;
  return CaptionModel{cfg, build_schedule(cfg.schedule), std::move(vocab), std::move(table),
                      std::move(denoiser)};
}

}  // namespace diffcap
