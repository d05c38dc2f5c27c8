#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "asrprobe/rng.hpp"
#include "asrprobe/stimulus.hpp"

namespace asrprobe {

/// Token-id triple used as a hash key.
struct TriKey {
  TokenId t1 = 0, t2 = 0, t3 = 0;

  friend auto operator<=>(const TriKey&, const TriKey&) = default;
};

struct TriKeyHash {
  std::size_t operator()(const TriKey& k) const noexcept {
    std::uint64_t h = derive_seed(k.t1, {k.t2, k.t3});
    return static_cast<std::size_t>(h);
  }
};

using TokenCounts = std::unordered_map<TokenId, std::uint64_t>;

/// Window statistics for one corpus or a merged set of shards.
struct CorpusStats {
  std::uint64_t n_tokens = 0;
  std::uint64_t n_windows = 0;
  std::uint64_t n_documents = 0;
  /// Only sameness-pattern windows whose three tokens are admissible.
  std::unordered_map<TriKey, std::uint64_t, TriKeyHash> trigram_counts;
  /// Token counts at window positions 1, 2, 3 over every window.
  std::array<TokenCounts, 3> pos_counts;

  void merge(const CorpusStats& other);

  friend bool operator==(const CorpusStats&, const CorpusStats&) = default;
};

/// Adds one document: every stride-1 window inside it updates the positional
/// counts; windows matching AAB/ABA/ABB with no token in `excluded` update
/// trigram_counts.
void scan_document(CorpusStats& stats, std::span<const TokenId> document,
                   const std::unordered_set<TokenId>& excluded = {});

CorpusStats scan_corpus(const std::vector<std::vector<TokenId>>& documents,
                        const std::unordered_set<TokenId>& excluded = {});

/// Streams documents to `workers` threads, each owning a CorpusStats shard;
/// finish() merges them.
class ShardedScanner {
 public:
  explicit ShardedScanner(std::size_t workers, std::unordered_set<TokenId> excluded = {},
                          std::size_t batch_tokens = 1 << 20);
  ~ShardedScanner();
  ShardedScanner(const ShardedScanner&) = delete;
  ShardedScanner& operator=(const ShardedScanner&) = delete;

  void add_document(std::span<const TokenId> document);
  CorpusStats finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Splits `documents` round-robin into `shards` parts, scans them on separate
/// threads and merges.
CorpusStats scan_corpus_sharded(const std::vector<std::vector<TokenId>>& documents,
                                std::size_t shards,
                                const std::unordered_set<TokenId>& excluded = {});

class UndefinedPmiError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// log2(N^2 * C(3gram) / (C(p1) * C(p2) * C(p3))), positional counts taken
/// from the window maps. The ratio is reduced exactly in 128-bit integers
/// before the logarithm, so scaling every count by k gives the same bits.
double compute_pmi(const TriKey& key, const CorpusStats& stats);

struct PmiEntry {
  TriGram trigram;
  std::uint64_t count = 0;
  double pmi = 0.0;
};

struct PmiRanking {
  Pattern pattern = Pattern::AAB;
  std::vector<PmiEntry> entries;
  std::string corpus_id;
  std::uint64_t min_count = 20;
  std::size_t k = 32;
  std::uint64_t n_tokens = 0;
  std::vector<std::string> warnings;
};

inline constexpr std::uint64_t kDefaultMinCount = 20;
inline constexpr std::size_t kDefaultTopK = 32;

/// Top-k tri-grams of `pattern` with count >= min_count. Order: pmi desc,
/// count desc, id triple asc. Surfaces come from `vocab` when given, else the
/// decimal id.
PmiRanking rank_top(const CorpusStats& stats, Pattern pattern,
                    std::uint64_t min_count = kDefaultMinCount, std::size_t k = kDefaultTopK,
                    const Vocabulary* vocab = nullptr, std::string corpus_id = {});

enum class SeenRole { Primes, Probes, Both };

struct SeenSelection {
  std::vector<TriGram> primes;
  std::vector<TriGram> probes;
};

/// Both: the top 32 are shuffled and split 16/16. Primes or Probes: the top
/// 16 in rank order.
SeenSelection select_seen_material(const PmiRanking& ranking, SeenRole role, Rng& rng);

inline constexpr const char* kRankingSchema = "asrprobe.pmi-ranking/1";

std::string ranking_to_json(const PmiRanking& ranking);
/// Throws FormatError on schema mismatch or malformed content.
PmiRanking ranking_from_json(const std::string& text);

}  // namespace asrprobe
