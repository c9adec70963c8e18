// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

namespace diffcap {

using Sentence = std::vector<std::string>;

struct BleuResult {
  double score = 0.0;
  double brevity_penalty = 0.0;
  std::array<double, 4> precisions{};  // clipped n-gram precisions p_1..p_4
  long candidate_length = 0;
  long reference_length = 0;  // sum of closest reference lengths
};

// Corpus BLEU-4 with uniform weights, per-candidate clipping against the
// maximum reference count, closest-reference length (shorter wins ties) for
// the brevity penalty and no smoothing: any zero precision yields 0.
BleuResult corpus_bleu(const std::vector<Sentence>& candidates,
                       const std::vector<std::vector<Sentence>>& references);

inline double bleu4(const std::vector<Sentence>& candidates,
                    const std::vector<std::vector<Sentence>>& references) {
  return corpus_bleu(candidates, references).score;
}

}  // namespace diffcap
