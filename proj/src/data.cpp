// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "diffcap/error.hpp"
#include "diffcap/textcodec.hpp"

namespace diffcap {

namespace {

constexpr char kMagic[4] = {'C', 'D', 'L', 'F'};
constexpr size_t kHeaderBytes = 12;

std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

Vec FeatureFile::row(std::uint32_t index) const {
  if (index >= count) throw ArgumentError("feature row out of range: " + std::to_string(index));
  Vec v(dim);
  for (std::uint32_t j = 0; j < dim; ++j) v(j) = values[static_cast<size_t>(index) * dim + j];
  return v;
}

FeatureFile read_features(const std::filesystem::path& path) {
  const std::string bytes = slurp(path);
  if (bytes.size() < kHeaderBytes)
    throw LoadError(LoadError::Kind::kTruncated, path.string() + ": truncated CDLF header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw LoadError(LoadError::Kind::kMagic, path.string() + ": bad magic, expected CDLF");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  FeatureFile f;
  f.count = read_u32le(p + 4);
  f.dim = read_u32le(p + 8);
  const std::uint64_t expected = kHeaderBytes + 4ull * f.count * f.dim;
  if (bytes.size() < expected)
    throw LoadError(LoadError::Kind::kTruncated,
                    path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                        std::to_string(bytes.size()));
  if (bytes.size() > expected)
    throw LoadError(LoadError::Kind::kTruncated,
                    path.string() + ": " + std::to_string(bytes.size() - expected) +
                        " trailing bytes beyond declared count*dim");
  f.values.resize(static_cast<size_t>(f.count) * f.dim);
  for (size_t i = 0; i < f.values.size(); ++i)
    f.values[i] = std::bit_cast<float>(read_u32le(p + kHeaderBytes + 4 * i));
  return f;
}

void write_features(const std::filesystem::path& path, const FeatureFile& f) {
  if (f.values.size() != static_cast<size_t>(f.count) * f.dim)
    throw ArgumentError("write_features: value count disagrees with count*dim");
  std::string out(kMagic, 4);
  put_u32le(out, f.count);
  put_u32le(out, f.dim);
  for (float v : f.values) put_u32le(out, std::bit_cast<std::uint32_t>(v));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError(LoadError::Kind::kIo, "cannot write " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

std::vector<CaptionRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot open " + path.string());
  std::vector<CaptionRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      CaptionRecord r;
      r.key = j.at("key").get<std::string>();
      r.captions = j.at("captions").get<std::vector<std::string>>();
      r.feature_row = j.at("feature_row").get<int>();
      if (r.captions.empty())
        throw LoadError(LoadError::Kind::kParse, where + ": record has no captions");
      for (const auto& c : r.captions)
        if (c.find_first_not_of(" \t\r\n") == std::string::npos)
          throw LoadError(LoadError::Kind::kParse, where + ": empty caption");
      if (r.feature_row < 0)
        throw LoadError(LoadError::Kind::kIndex, where + ": negative feature_row");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(LoadError::Kind::kParse, where + ": " + e.what());
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<CaptionRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw LoadError(LoadError::Kind::kIo, "cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["key"] = r.key;
    j["captions"] = r.captions;
    j["feature_row"] = r.feature_row;
    os << j.dump() << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& jsonl_path,
                     const std::filesystem::path& feature_path) {
  Dataset d;
  d.features = read_features(feature_path);
  d.records = read_records(jsonl_path);
  for (const auto& r : d.records)
    if (static_cast<std::uint32_t>(r.feature_row) >= d.features.count)
      throw LoadError(LoadError::Kind::kIndex,
                      "record '" + r.key + "' references feature row " +
                          std::to_string(r.feature_row) + " but the file holds " +
                          std::to_string(d.features.count));
  return d;
}

namespace {

const std::array<const char*, 8> kColors = {"red",   "blue",  "green", "yellow",
                                            "black", "white", "brown", "orange"};
const std::array<const char*, 8> kAnimals = {"dog", "cat",   "horse", "bird",
                                             "cow", "sheep", "goat",  "duck"};
const std::array<const char*, 8> kVerbs = {"runs", "jumps", "sleeps", "swims",
                                           "sits", "eats",  "walks",  "plays"};

std::string render(int variant, const std::string& c, const std::string& a, const std::string& v) {
  switch (variant % 5) {
    case 0: return "a " + c + " " + a + " " + v;
    case 1: return "the " + c + " " + a + " " + v;
    case 2: return "a " + c + " " + a + " " + v + " outside";
    case 3: return "one " + c + " " + a + " " + v;
    default: return "a " + c + " " + a + " " + v + " on the grass";
  }
}

}  // namespace

Dataset make_toy_dataset(const ToyCorpusOptions& opts, std::vector<std::string>* heldout_keys) {
  if (opts.num_scenes < 2) throw ConfigError("scenes", "must be >= 2");
  if (opts.captions_per_scene < 1 || opts.captions_per_scene > 5)
    throw ConfigError("captions_per_scene", "must lie in [1, 5]");
  if (opts.dim < 1) throw ConfigError("dim", "must be >= 1");
  constexpr int kCombos = 8 * 8 * 8;
  if (opts.num_scenes > kCombos) throw ConfigError("scenes", "at most 512 distinct scenes");

  std::mt19937_64 rng(opts.seed);
  std::vector<int> combos(kCombos);
  std::iota(combos.begin(), combos.end(), 0);
  std::shuffle(combos.begin(), combos.end(), rng);

  Dataset d;
  d.features.count = static_cast<std::uint32_t>(opts.num_scenes);
  d.features.dim = static_cast<std::uint32_t>(opts.dim);
  d.features.values.resize(static_cast<size_t>(opts.num_scenes) * opts.dim);

  std::normal_distribution<double> normal(0.0, 1.0);
  Mat dirs(opts.num_scenes, opts.dim);
  for (Eigen::Index i = 0; i < dirs.size(); ++i) dirs.data()[i] = normal(rng);
  // Gram-Schmidt while there is room, so scene vectors are mutually orthogonal.
  for (int i = 0; i < opts.num_scenes; ++i) {
    if (i < opts.dim)
      for (int k = 0; k < i; ++k) dirs.row(i) -= dirs.row(i).dot(dirs.row(k)) * dirs.row(k);
    dirs.row(i).normalize();
  }
  const double scale = std::sqrt(static_cast<double>(opts.dim));

  for (int s = 0; s < opts.num_scenes; ++s) {
    const int combo = combos[static_cast<size_t>(s)];
    const std::string color = kColors[combo % 8];
    const std::string animal = kAnimals[(combo / 8) % 8];
    const std::string verb = kVerbs[combo / 64];
    CaptionRecord r;
    char key[32];
    std::snprintf(key, sizeof key, "scene_%03d", s);
    r.key = key;
    r.feature_row = s;
    for (int c = 0; c < opts.captions_per_scene; ++c) r.captions.push_back(render(c, color, animal, verb));
    d.records.push_back(std::move(r));
    for (int j = 0; j < opts.dim; ++j)
      d.features.values[static_cast<size_t>(s) * opts.dim + j] = static_cast<float>(scale * dirs(s, j));
  }

  if (heldout_keys) {
    heldout_keys->clear();
    const int n_held = std::clamp(
        static_cast<int>(std::lround(opts.heldout_fraction * opts.num_scenes)), 1, opts.num_scenes - 1);
    std::vector<int> order(static_cast<size_t>(opts.num_scenes));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::sort(order.begin(), order.begin() + n_held);
    for (int i = 0; i < n_held; ++i) heldout_keys->push_back(d.records[static_cast<size_t>(order[i])].key);
  }
  return d;
}

ToyCorpusFiles make_toy_corpus(const ToyCorpusOptions& opts, const std::filesystem::path& out_dir) {
  std::vector<std::string> held;
  const Dataset d = make_toy_dataset(opts, &held);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw LoadError(LoadError::Kind::kIo, "cannot create " + out_dir.string());
  ToyCorpusFiles files{out_dir / "captions.jsonl", out_dir / "features.cdlf",
                       out_dir / "heldout.txt", out_dir / "vocab.txt"};
  write_records(files.captions, d.records);
  write_features(files.features, d.features);
  {
    std::ofstream os(files.heldout, std::ios::binary);
    if (!os) throw LoadError(LoadError::Kind::kIo, "cannot write " + files.heldout.string());
    for (const auto& k : held) os << k << '\n';
  }
  std::vector<std::string> texts;
  for (const auto& r : d.records) texts.insert(texts.end(), r.captions.begin(), r.captions.end());
  // Vocabulary over every template word so any scene is representable.
  for (const char* w : {"a", "the", "one", "outside", "on", "grass"}) texts.emplace_back(w);
  for (auto* arr : {&kColors, &kAnimals, &kVerbs})
    for (const char* w : *arr) texts.emplace_back(w);
  Vocab::from_texts(texts).save(files.vocab);
  return files;
}

std::vector<std::string> read_key_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(LoadError::Kind::kIo, "cannot open " + path.string());
  std::vector<std::string> keys;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) keys.push_back(line);
  }
  return keys;
}

Split split(const std::vector<CaptionRecord>& records, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw ConfigError("data.val_fraction", "must lie in (0, 1)");
  const size_t n = records.size();
  const auto n_val = static_cast<size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n)
    throw ConfigError("data.val_fraction", "split of " + std::to_string(n) +
                                               " records leaves one side empty");
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> is_val(n, false);
  for (size_t i = 0; i < n_val; ++i) is_val[order[i]] = true;
  Split out;
  for (size_t i = 0; i < n; ++i) (is_val[i] ? out.val : out.train).push_back(records[i]);
  return out;
}

Split split_by_keys(const std::vector<CaptionRecord>& records,
                    const std::vector<std::string>& val_keys) {
  const std::set<std::string> keys(val_keys.begin(), val_keys.end());
  Split out;
  for (const auto& r : records) (keys.contains(r.key) ? out.val : out.train).push_back(r);
  if (out.train.empty() || out.val.empty())
    throw ConfigError("data.heldout", "held-out key list leaves one side empty");
  return out;
}

}  // namespace diffcap
