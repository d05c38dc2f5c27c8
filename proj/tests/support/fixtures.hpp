#pragma once

#include <map>

#include "asrprobe/experiment.hpp"
#include "asrprobe/pmi.hpp"

namespace asrprobe::testing {

/// A ranking of `n` tri-grams over synthetic-vocabulary ids; each pattern uses
/// its own id range so rankings never share tokens.
inline PmiRanking synthetic_ranking(Pattern p, std::size_t n, const Vocabulary& vocab) {
  PmiRanking r;
  r.pattern = p;
  r.corpus_id = "synthetic";
  const TokenId base = 1 + 100 * static_cast<TokenId>(p);
  for (std::size_t i = 0; i < n; ++i) {
    const Token& a = vocab.at(base + static_cast<TokenId>(i));
    const Token& b = vocab.at(base + 1000 + static_cast<TokenId>(i));
    r.entries.push_back({instantiate(p, a, b), 100 - i, 20.0 - 0.25 * static_cast<double>(i)});
  }
  return r;
}

inline std::map<Pattern, PmiRanking> synthetic_rankings(const Vocabulary& vocab,
                                                        std::size_t n = 32) {
  std::map<Pattern, PmiRanking> out;
  for (Pattern p : kPrimePatterns) out[p] = synthetic_ranking(p, n, vocab);
  return out;
}

}  // namespace asrprobe::testing

namespace asrprobe::testing {

/// Results table from row-major means; columns AAB, ABA, ABB[, ABC].
inline ResultsTable table_from(const std::vector<std::vector<double>>& rows,
                               Setting setting = Setting::RandomRandom,
                               std::string scorer = "table") {
  ResultsTable t;
  t.setting = setting;
  t.scorer = std::move(scorer);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      t.cells[{kPrimePatterns[r], kAllPatterns[c]}] = {rows[r][c], 1.0, 12288};
    }
  }
  t.expected_n = 12288;
  return t;
}

}  // namespace asrprobe::testing
