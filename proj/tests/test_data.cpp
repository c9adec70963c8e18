// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "diffcap/data.hpp"
#include "diffcap/error.hpp"

using namespace diffcap;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("diffcap_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

FeatureFile small_features(std::uint32_t count, std::uint32_t dim) {
  FeatureFile f;
  f.count = count;
  f.dim = dim;
  for (std::uint32_t i = 0; i < count * dim; ++i) f.values.push_back(0.25f * static_cast<float>(i) - 1.0f);
  return f;
}

}  // namespace

TEST(Features, LittleEndianLayout) {
  TempDir d;
  const auto p = d.path() / "f.cdlf";
  write_features(p, small_features(2, 16));
  const std::string bytes = slurp(p);
  ASSERT_EQ(bytes.size(), 140u);
  EXPECT_EQ(bytes.substr(0, 4), "CDLF");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 2u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 16u);
  // -1.0f = 0xBF800000, stored little-endian.
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 0x00u);
  EXPECT_EQ(static_cast<unsigned char>(bytes[15]), 0xBFu);
  const FeatureFile back = read_features(p);
  EXPECT_EQ(back.count, 2u);
  EXPECT_EQ(back.dim, 16u);
  EXPECT_EQ(back.values, small_features(2, 16).values);
  EXPECT_FLOAT_EQ(static_cast<float>(back.row(1)(0)), 0.25f * 16 - 1.0f);
}

TEST(Features, DistinctLoadErrors) {
  TempDir d;
  const auto good = d.path() / "good.cdlf";
  write_features(good, small_features(3, 4));
  const std::string bytes = slurp(good);

  auto kind_of = [&](const std::string& content) {
    const auto p = d.path() / "bad.cdlf";
    spit(p, content);
    try {
      read_features(p);
    } catch (const LoadError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "expected a load error";
    return LoadError::Kind::kIo;
  };
  EXPECT_EQ(kind_of("XDLF" + bytes.substr(4)), LoadError::Kind::kMagic);
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 4)), LoadError::Kind::kTruncated);
  EXPECT_EQ(kind_of(bytes + "abcd"), LoadError::Kind::kTruncated);
  EXPECT_EQ(kind_of(bytes.substr(0, 6)), LoadError::Kind::kTruncated);
  EXPECT_THROW(read_features(d.path() / "missing.cdlf"), LoadError);
}

TEST(Records, FixtureRoundTripsExactly) {
  TempDir d;
  const std::vector<CaptionRecord> recs{
      {"img_a", {"a dog runs", "the dog runs fast"}, 0},
      {"img_b", {"two \"quoted\" cats"}, 2},
      {"img_c", {"x", "y", "z", "w", "v"}, 1}};
  write_records(d.path() / "r.jsonl", recs);
  EXPECT_EQ(read_records(d.path() / "r.jsonl"), recs);
}

TEST(Dataset, EmptyAndIndexErrors) {
  TempDir d;
  write_features(d.path() / "f.cdlf", small_features(2, 4));
  spit(d.path() / "empty.jsonl", "");
  EXPECT_TRUE(load_dataset(d.path() / "empty.jsonl", d.path() / "f.cdlf").records.empty());

  spit(d.path() / "oob.jsonl", R"({"key":"k","captions":["a b"],"feature_row":2})" "\n");
  try {
    load_dataset(d.path() / "oob.jsonl", d.path() / "f.cdlf");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadError::Kind::kIndex);
  }
  spit(d.path() / "nocap.jsonl", R"({"key":"k","captions":[],"feature_row":0})" "\n");
  EXPECT_THROW(load_dataset(d.path() / "nocap.jsonl", d.path() / "f.cdlf"), LoadError);
  spit(d.path() / "garbage.jsonl", "{not json\n");
  EXPECT_THROW(load_dataset(d.path() / "garbage.jsonl", d.path() / "f.cdlf"), LoadError);
}

TEST(ToyCorpus, DeterministicBytes) {
  TempDir d;
  ToyCorpusOptions o;
  o.seed = 42;
  const auto a = make_toy_corpus(o, d.path() / "a");
  const auto b = make_toy_corpus(o, d.path() / "b");
  EXPECT_EQ(slurp(a.captions), slurp(b.captions));
  EXPECT_EQ(slurp(a.features), slurp(b.features));
  EXPECT_EQ(slurp(a.heldout), slurp(b.heldout));
  EXPECT_EQ(slurp(a.vocab), slurp(b.vocab));
  o.seed = 43;
  const auto c = make_toy_corpus(o, d.path() / "c");
  EXPECT_NE(slurp(a.features), slurp(c.features));
}

TEST(ToyCorpus, SizesAndSceneSeparation) {
  TempDir d;
  ToyCorpusOptions o;
  o.num_scenes = 2;
  o.dim = 16;
  const auto files = make_toy_corpus(o, d.path());
  EXPECT_EQ(fs::file_size(files.features), 140u);

  for (int scenes : {4, 16}) {
    o.num_scenes = scenes;
    const Dataset ds = make_toy_dataset(o, nullptr);
    ASSERT_EQ(ds.records.size(), static_cast<size_t>(scenes));
    for (int i = 0; i < scenes; ++i)
      for (int j = i + 1; j < scenes; ++j) {
        const Vec a = ds.features.row(static_cast<std::uint32_t>(i));
        const Vec b = ds.features.row(static_cast<std::uint32_t>(j));
        EXPECT_LT(a.dot(b) / (a.norm() * b.norm()), 0.5);
      }
    for (const auto& r : ds.records) {
      ASSERT_FALSE(r.captions.empty());
      EXPECT_EQ(r.captions[0].rfind("a ", 0), 0u) << r.captions[0];
    }
  }
  EXPECT_THROW(make_toy_dataset({.num_scenes = 1}, nullptr), ConfigError);
}

TEST(ToyCorpus, HeldoutKeysAreValidAndProper) {
  std::vector<std::string> held;
  const Dataset ds = make_toy_dataset({}, &held);
  EXPECT_FALSE(held.empty());
  EXPECT_LT(held.size(), ds.records.size());
  const Split sp = split_by_keys(ds.records, held);
  EXPECT_EQ(sp.val.size(), held.size());
  EXPECT_EQ(sp.train.size() + sp.val.size(), ds.records.size());
}

TEST(Split, FractionDisjointDeterministic) {
  std::vector<CaptionRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back({"k" + std::to_string(i), {"a"}, i});
  const Split a = split(recs, 0.2, 7);
  EXPECT_EQ(a.train.size(), 8u);
  EXPECT_EQ(a.val.size(), 2u);
  std::vector<std::string> keys;
  for (const auto& r : a.train) keys.push_back(r.key);
  for (const auto& r : a.val) keys.push_back(r.key);
  std::sort(keys.begin(), keys.end());
  std::vector<std::string> want;
  for (const auto& r : recs) want.push_back(r.key);
  std::sort(want.begin(), want.end());
  EXPECT_EQ(keys, want);
  const Split b = split(recs, 0.2, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_THROW(split(recs, 0.01, 7), ConfigError);
  EXPECT_THROW(split(recs, 1.0, 7), ConfigError);
}
