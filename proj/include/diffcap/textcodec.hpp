// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diffcap/diffusion.hpp"
#include "diffcap/tensor.hpp"

namespace diffcap {

// Word vocabulary. Ids 0..3 are reserved for <pad>, <bos>, <eos>, <unk>.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocab();
  // Specials followed by `words` (deduplicated, order preserved).
  explicit Vocab(const std::vector<std::string>& words);

  // Specials plus every distinct lowercase token in `texts`, sorted.
  static Vocab from_texts(const std::vector<std::string>& texts);

  // One token per line; line number is the id.
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(id_to_token_.size()); }
  int id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int id) const;
  static bool is_special(int id) { return id >= 0 && id < kNumSpecial; }

  const std::vector<std::string>& tokens() const { return id_to_token_; }

 private:
  void add(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

// Lowercase whitespace split; the same scheme is used for BLEU.
std::vector<std::string> split_words(std::string_view text);

struct TokenizedCaption {
  std::vector<int> ids;  // length L
  PadMask mask;          // true on bos, words, eos
};

// [bos, w_1..w_k, eos, pad...] with k <= L - 2.
TokenizedCaption tokenize(std::string_view text, int L, const Vocab& vocab);

// Joins non-special tokens with single spaces.
std::string detokenize(const std::vector<int>& ids, const Vocab& vocab);

// Row i is the embedding of token id i. The lm-head is the same matrix:
// logits = matrix * x.
struct EmbeddingTable {
  Mat matrix;
  bool frozen = true;

  int vocab_size() const { return static_cast<int>(matrix.rows()); }
  int dim() const { return static_cast<int>(matrix.cols()); }
  const Mat& lm_head() const { return matrix; }
};

// Unit-norm rows drawn from a spherical Gaussian, redrawn until every pair is
// at least `min_separation` apart in L2.
EmbeddingTable init_embedding_table(int vocab_size, int dim, std::uint64_t seed,
                                    double min_separation = 1.0);

// Smallest pairwise L2 distance between rows.
double min_row_separation(const Mat& rows);

LatentSeq embed(const std::vector<int>& ids, const EmbeddingTable& table,
                const PadMask& mask);

// Argmax over lm-head logits per masked position (ties to the lowest id).
std::vector<int> argmax_ids(const Mat& pred_x0, const EmbeddingTable& table);

// Stops at the first <eos>; <pad>, <bos> and <unk> are dropped.
std::vector<std::string> decode_argmax(const Mat& pred_x0, const EmbeddingTable& table,
                                       const Vocab& vocab, const PadMask& mask);

std::vector<std::string> dedup_consecutive(const std::vector<std::string>& tokens);

std::string join_words(const std::vector<std::string>& words);

}  // namespace diffcap
