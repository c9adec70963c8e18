// Copyright 2026 The diffcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffcap/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>

#include "diffcap/error.hpp"

namespace diffcap {

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts count_ngrams(const Sentence& s, size_t n) {
  NgramCounts counts;
  if (s.size() < n) return counts;
  for (size_t i = 0; i + n <= s.size(); ++i)
    ++counts[std::vector<std::string>(s.begin() + static_cast<long>(i),
                                      s.begin() + static_cast<long>(i + n))];
  return counts;
}

}  // namespace

BleuResult corpus_bleu(const std::vector<Sentence>& candidates,
                       const std::vector<std::vector<Sentence>>& references) {
  if (candidates.empty()) throw ArgumentError("bleu4: empty corpus");
  if (candidates.size() != references.size())
    throw ArgumentError("bleu4: candidate and reference counts differ");

  std::array<long, 4> matched{}, total{};
  BleuResult out;
  for (size_t k = 0; k < candidates.size(); ++k) {
    const Sentence& cand = candidates[k];
    const auto& refs = references[k];
    if (refs.empty()) throw ArgumentError("bleu4: candidate without references");
    out.candidate_length += static_cast<long>(cand.size());

    long closest = static_cast<long>(refs.front().size());
    for (const auto& r : refs) {
      const long len = static_cast<long>(r.size());
      const long d = std::labs(len - static_cast<long>(cand.size()));
      const long best_d = std::labs(closest - static_cast<long>(cand.size()));
      if (d < best_d || (d == best_d && len < closest)) closest = len;
    }
    out.reference_length += closest;

    for (size_t n = 1; n <= 4; ++n) {
      const NgramCounts cand_counts = count_ngrams(cand, n);
      NgramCounts max_ref;
      for (const auto& r : refs)
        for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      for (const auto& [g, c] : cand_counts) {
        total[n - 1] += c;
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }

  for (int n = 0; n < 4; ++n)
    out.precisions[n] = total[n] == 0 ? 0.0 : static_cast<double>(matched[n]) / total[n];

  if (out.candidate_length == 0) {
    out.brevity_penalty = 0.0;
    return out;
  }
  out.brevity_penalty =
      out.candidate_length > out.reference_length
          ? 1.0
          : std::exp(1.0 - static_cast<double>(out.reference_length) / out.candidate_length);

  double log_sum = 0.0;
  for (double p : out.precisions) {
    if (p == 0.0) return out;
    log_sum += std::log(p);
  }
  out.score = out.brevity_penalty * std::exp(log_sum / 4.0);
  return out;
}

}  // namespace diffcap
