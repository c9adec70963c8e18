// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/textcodec.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include "diffcap/error.hpp"

namespace diffcap {

namespace {
const char* const kSpecials[Vocab::kNumSpecial] = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
  for (const char* s : kSpecials) add(s);
}

Vocab::Vocab(const std::vector<std::string>& words) : Vocab() {
  for (const auto& w : words)
    if (!token_to_id_.contains(w)) add(w);
}

void Vocab::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocab Vocab::from_texts(const std::vector<std::string>& texts) {
  std::set<std::string> words;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) words.insert(std::move(w));
  return Vocab(std::vector<std::string>(words.begin(), words.end()));
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot open vocab file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  if (lines.size() < kNumSpecial)
    throw LoadError(LoadError::Kind::kParse, "vocab file lacks the reserved special lines");
  Vocab v;
  v.id_to_token_.clear();
  v.token_to_id_.clear();
  for (const auto& l : lines) {
    if (v.token_to_id_.contains(l))
      throw LoadError(LoadError::Kind::kParse, "duplicate vocab entry '" + l + "'");
    v.add(l);
  }
  return v;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError(LoadError::Kind::kIo, "cannot write vocab file " + path.string());
  for (const auto& t : id_to_token_) out << t << '\n';
}

int Vocab::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ArgumentError("token id out of range: " + std::to_string(id));
  return id_to_token_[id];
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

TokenizedCaption tokenize(std::string_view text, int L, const Vocab& vocab) {
  if (L < 2) throw ArgumentError("tokenize: L must be >= 2");
  const auto words = split_words(text);
  const size_t keep = std::min(words.size(), static_cast<size_t>(L - 2));
  TokenizedCaption out;
  out.ids.assign(L, Vocab::kPad);
  out.mask.assign(L, false);
  out.ids[0] = Vocab::kBos;
  out.mask[0] = true;
  for (size_t i = 0; i < keep; ++i) {
    out.ids[i + 1] = vocab.id(words[i]);
    out.mask[i + 1] = true;
  }
  out.ids[keep + 1] = Vocab::kEos;
  out.mask[keep + 1] = true;
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocab& vocab) {
  std::vector<std::string> words;
  for (int id : ids)
    if (!Vocab::is_special(id)) words.push_back(vocab.token(id));
  return join_words(words);
}

double min_row_separation(const Mat& rows) {
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < rows.rows(); ++i)
    for (Eigen::Index j = i + 1; j < rows.rows(); ++j)
      best = std::min(best, (rows.row(i) - rows.row(j)).norm());
  return best;
}

EmbeddingTable init_embedding_table(int vocab_size, int dim, std::uint64_t seed,
                                    double min_separation) {
  if (vocab_size < 1 || dim < 1) throw ArgumentError("embedding table must be non-empty");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  EmbeddingTable table;
  table.matrix.resize(vocab_size, dim);
  constexpr int kMaxAttempts = 10000;
  for (int i = 0; i < vocab_size; ++i) {
    for (int attempt = 0;; ++attempt) {
      for (int j = 0; j < dim; ++j) table.matrix(i, j) = normal(rng);
      table.matrix.row(i).normalize();
      bool ok = true;
      for (int k = 0; k < i && ok; ++k)
        ok = (table.matrix.row(i) - table.matrix.row(k)).norm() >= min_separation;
      if (ok) break;
      if (attempt == kMaxAttempts)
        throw ConfigError("embedding.dim", "too small to separate " +
                                               std::to_string(vocab_size) + " rows");
    }
  }
  return table;
}

LatentSeq embed(const std::vector<int>& ids, const EmbeddingTable& table,
                const PadMask& mask) {
  LatentSeq out;
  out.t = 0;
  out.pad_mask = mask;
  out.values.resize(static_cast<Eigen::Index>(ids.size()), table.dim());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.vocab_size())
      throw ArgumentError("embed: token id out of range: " + std::to_string(ids[i]));
    out.values.row(static_cast<Eigen::Index>(i)) = table.matrix.row(ids[i]);
  }
  return out;
}

std::vector<int> argmax_ids(const Mat& pred_x0, const EmbeddingTable& table) {
  if (pred_x0.cols() != table.dim()) throw ArgumentError("argmax_ids: width mismatch");
  std::vector<int> out(static_cast<size_t>(pred_x0.rows()));
  Vec logits(table.vocab_size());
  for (Eigen::Index i = 0; i < pred_x0.rows(); ++i) {
    logits.noalias() = table.lm_head() * pred_x0.row(i).transpose();
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < logits.size(); ++k)
      if (logits(k) > logits(best)) best = k;
    out[static_cast<size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<std::string> decode_argmax(const Mat& pred_x0, const EmbeddingTable& table,
                                       const Vocab& vocab, const PadMask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != pred_x0.rows())
    throw ArgumentError("decode_argmax: mask length mismatch");
  const auto ids = argmax_ids(pred_x0, table);
  std::vector<std::string> out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (!mask[i]) continue;
    if (ids[i] == Vocab::kEos) break;
    if (Vocab::is_special(ids[i])) continue;
    out.push_back(vocab.token(ids[i]));
  }
  return out;
}

std::vector<std::string> dedup_consecutive(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens)
    if (out.empty() || out.back() != t) out.push_back(t);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace diffcap
