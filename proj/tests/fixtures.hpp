// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <random>
#include <string>
#include <vector>

namespace fixtures {

struct Corpus {
  std::vector<std::vector<std::string>> candidates;
  std::vector<std::vector<std::vector<std::string>>> references;
};

// Random sentences over a small alphabet so n-gram overlaps are frequent.
inline Corpus random_corpus(std::mt19937_64& rng) {
  static const std::vector<std::string> words{"a", "the", "cat", "dog", "runs", "red", "on", "grass"};
  std::uniform_int_distribution<int> n_sent(1, 8), n_refs(1, 4), len(1, 12),
      pick(0, static_cast<int>(words.size()) - 1);
  auto sentence = [&] {
    std::vector<std::string> s(static_cast<size_t>(len(rng)));
    for (auto& w : s) w = words[static_cast<size_t>(pick(rng))];
    return s;
  };
  Corpus c;
  const int n = n_sent(rng);
  for (int i = 0; i < n; ++i) {
    c.candidates.push_back(sentence());
    std::vector<std::vector<std::string>> refs;
    const int r = n_refs(rng);
    for (int j = 0; j < r; ++j) refs.push_back(sentence());
    c.references.push_back(std::move(refs));
  }
  return c;
}

}  // namespace fixtures
