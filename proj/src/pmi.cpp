#include "asrprobe/pmi.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "asrprobe/errors.hpp"

namespace asrprobe {

using json = nlohmann::json;

void CorpusStats::merge(const CorpusStats& other) {
  n_tokens += other.n_tokens;
  n_windows += other.n_windows;
  n_documents += other.n_documents;
  for (const auto& [key, c] : other.trigram_counts) trigram_counts[key] += c;
  for (std::size_t p = 0; p < 3; ++p) {
    for (const auto& [id, c] : other.pos_counts[p]) pos_counts[p][id] += c;
  }
}

void scan_document(CorpusStats& stats, std::span<const TokenId> document,
                   const std::unordered_set<TokenId>& excluded) {
  stats.n_tokens += document.size();
  ++stats.n_documents;
  if (document.size() < 3) return;
  for (std::size_t i = 0; i + 2 < document.size(); ++i) {
    const TokenId a = document[i], b = document[i + 1], c = document[i + 2];
    ++stats.pos_counts[0][a];
    ++stats.pos_counts[1][b];
    ++stats.pos_counts[2][c];
    ++stats.n_windows;
    const auto p = pattern_of(a, b, c);
    if (!p || !is_prime_pattern(*p)) continue;
    if (!excluded.empty() && (excluded.count(a) || excluded.count(b) || excluded.count(c))) {
      continue;
    }
    ++stats.trigram_counts[TriKey{a, b, c}];
  }
}

CorpusStats scan_corpus(const std::vector<std::vector<TokenId>>& documents,
                        const std::unordered_set<TokenId>& excluded) {
  CorpusStats stats;
  for (const auto& doc : documents) scan_document(stats, doc, excluded);
  return stats;
}

struct ShardedScanner::Impl {
  std::unordered_set<TokenId> excluded;
  std::size_t batch_tokens;
  std::vector<CorpusStats> shards;
  std::vector<std::thread> threads;

  std::mutex mu;
  std::condition_variable cv_work, cv_space;
  std::deque<std::vector<std::vector<TokenId>>> queue;
  bool closing = false;

  std::vector<std::vector<TokenId>> pending;
  std::size_t pending_tokens = 0;

  void worker(std::size_t slot) {
    for (;;) {
      std::vector<std::vector<TokenId>> batch;
      {
        std::unique_lock lock(mu);
        cv_work.wait(lock, [&] { return closing || !queue.empty(); });
        if (queue.empty()) return;
        batch = std::move(queue.front());
        queue.pop_front();
      }
      cv_space.notify_one();
      for (const auto& doc : batch) scan_document(shards[slot], doc, excluded);
    }
  }

  void flush() {
    if (pending.empty()) return;
    {
      std::unique_lock lock(mu);
      cv_space.wait(lock, [&] { return queue.size() < 2 * threads.size(); });
      queue.push_back(std::move(pending));
    }
    cv_work.notify_one();
    pending.clear();
    pending_tokens = 0;
  }
};

ShardedScanner::ShardedScanner(std::size_t workers, std::unordered_set<TokenId> excluded,
                               std::size_t batch_tokens)
    : impl_(std::make_unique<Impl>()) {
  if (workers == 0) workers = 1;
  impl_->excluded = std::move(excluded);
  impl_->batch_tokens = std::max<std::size_t>(batch_tokens, 1);
  impl_->shards.resize(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    impl_->threads.emplace_back([this, w] { impl_->worker(w); });
  }
}

ShardedScanner::~ShardedScanner() {
  if (!impl_) return;
  {
    std::lock_guard lock(impl_->mu);
    impl_->closing = true;
  }
  impl_->cv_work.notify_all();
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
}

void ShardedScanner::add_document(std::span<const TokenId> document) {
  impl_->pending.emplace_back(document.begin(), document.end());
  impl_->pending_tokens += document.size();
  if (impl_->pending_tokens >= impl_->batch_tokens) impl_->flush();
}

CorpusStats ShardedScanner::finish() {
  impl_->flush();
  {
    std::lock_guard lock(impl_->mu);
    impl_->closing = true;
  }
  impl_->cv_work.notify_all();
  for (auto& t : impl_->threads) t.join();
  impl_->threads.clear();
  CorpusStats merged;
  for (const auto& s : impl_->shards) merged.merge(s);
  return merged;
}

CorpusStats scan_corpus_sharded(const std::vector<std::vector<TokenId>>& documents,
                                std::size_t shards,
                                const std::unordered_set<TokenId>& excluded) {
  if (shards == 0) shards = 1;
  std::vector<CorpusStats> parts(shards);
  std::vector<std::thread> threads;
  for (std::size_t s = 0; s < shards; ++s) {
    threads.emplace_back([&, s] {
      for (std::size_t d = s; d < documents.size(); d += shards) {
        scan_document(parts[s], documents[d], excluded);
      }
    });
  }
  for (auto& t : threads) t.join();
  CorpusStats merged;
  for (const auto& p : parts) merged.merge(p);
  return merged;
}

namespace {

using u128 = unsigned __int128;

u128 gcd128(u128 a, u128 b) {
  while (b != 0) {
    const u128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

std::uint64_t positional(const CorpusStats& stats, std::size_t pos, TokenId id) {
  const auto& m = stats.pos_counts[pos];
  auto it = m.find(id);
  return it == m.end() ? 0 : it->second;
}

}  // namespace

double compute_pmi(const TriKey& key, const CorpusStats& stats) {
  auto it = stats.trigram_counts.find(key);
  const std::uint64_t c = it == stats.trigram_counts.end() ? 0 : it->second;
  const std::uint64_t c1 = positional(stats, 0, key.t1);
  const std::uint64_t c2 = positional(stats, 1, key.t2);
  const std::uint64_t c3 = positional(stats, 2, key.t3);
  const std::uint64_t n = stats.n_tokens;
  if (c == 0 || c1 == 0 || c2 == 0 || c3 == 0 || n == 0) {
    throw UndefinedPmiError("pmi undefined for (" + std::to_string(key.t1) + "," +
                            std::to_string(key.t2) + "," + std::to_string(key.t3) +
                            "): a component count is zero");
  }

  u128 num = 0, den = 0;
  const bool overflow = __builtin_mul_overflow(static_cast<u128>(n), static_cast<u128>(n), &num) ||
                        __builtin_mul_overflow(num, static_cast<u128>(c), &num) ||
                        __builtin_mul_overflow(static_cast<u128>(c1), static_cast<u128>(c2), &den) ||
                        __builtin_mul_overflow(den, static_cast<u128>(c3), &den);
  if (overflow) {
    return static_cast<double>(2.0L * std::log2(static_cast<long double>(n)) +
                               std::log2(static_cast<long double>(c)) -
                               std::log2(static_cast<long double>(c1)) -
                               std::log2(static_cast<long double>(c2)) -
                               std::log2(static_cast<long double>(c3)));
  }
  const u128 g = gcd128(num, den);
  num /= g;
  den /= g;
  return static_cast<double>(std::log2(static_cast<long double>(num)) -
                             std::log2(static_cast<long double>(den)));
}

namespace {

Token resolve(TokenId id, const Vocabulary* vocab) {
  if (vocab && vocab->contains(id)) return vocab->at(id);
  return Token{std::to_string(id), id};
}

bool ranks_before(const PmiEntry& x, const PmiEntry& y) {
  if (x.pmi != y.pmi) return x.pmi > y.pmi;
  if (x.count != y.count) return x.count > y.count;
  return x.trigram.ids() < y.trigram.ids();
}

}  // namespace

PmiRanking rank_top(const CorpusStats& stats, Pattern pattern, std::uint64_t min_count,
                    std::size_t k, const Vocabulary* vocab, std::string corpus_id) {
  if (!is_prime_pattern(pattern)) throw ConfigError("only AAB, ABA and ABB can be ranked");
  PmiRanking ranking;
  ranking.pattern = pattern;
  ranking.corpus_id = std::move(corpus_id);
  ranking.min_count = min_count;
  ranking.k = k;
  ranking.n_tokens = stats.n_tokens;

  std::vector<PmiEntry> candidates;
  for (const auto& [key, count] : stats.trigram_counts) {
    if (count < min_count || pattern_of(key.t1, key.t2, key.t3) != pattern) continue;
    PmiEntry e;
    e.trigram = TriGram{resolve(key.t1, vocab), resolve(key.t2, vocab), resolve(key.t3, vocab),
                        pattern};
    e.count = count;
    e.pmi = compute_pmi(key, stats);
    candidates.push_back(std::move(e));
  }
  const std::size_t keep = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), ranks_before);
  candidates.resize(keep);
  ranking.entries = std::move(candidates);

  if (ranking.entries.empty()) {
    ranking.warnings.push_back("no " + std::string(to_string(pattern)) +
                               " tri-gram reaches min_count " + std::to_string(min_count));
  } else if (ranking.entries.size() < k) {
    ranking.warnings.push_back("only " + std::to_string(ranking.entries.size()) + " " +
                               std::string(to_string(pattern)) + " tri-grams qualify (wanted " +
                               std::to_string(k) + ")");
  }
  return ranking;
}

SeenSelection select_seen_material(const PmiRanking& ranking, SeenRole role, Rng& rng) {
  const std::size_t need = role == SeenRole::Both ? 2 * kSequenceLength : kSequenceLength;
  if (ranking.entries.size() < need) {
    throw ConfigError("seen material for " + std::string(to_string(ranking.pattern)) + " needs " +
                      std::to_string(need) + " ranked tri-grams, ranking has " +
                      std::to_string(ranking.entries.size()));
  }
  std::vector<TriGram> top;
  top.reserve(need);
  for (std::size_t i = 0; i < need; ++i) top.push_back(ranking.entries[i].trigram);

  SeenSelection sel;
  switch (role) {
    case SeenRole::Primes:
      sel.primes = std::move(top);
      break;
    case SeenRole::Probes:
      sel.probes = std::move(top);
      break;
    case SeenRole::Both:
      shuffle(std::span<TriGram>(top), rng);
      sel.primes.assign(top.begin(), top.begin() + kSequenceLength);
      sel.probes.assign(top.begin() + kSequenceLength, top.end());
      break;
  }
  return sel;
}

std::string ranking_to_json(const PmiRanking& ranking) {
  json entries = json::array();
  for (const auto& e : ranking.entries) {
    json tokens = json::array();
    for (const Token* t : {&e.trigram.t1, &e.trigram.t2, &e.trigram.t3}) {
      tokens.push_back({{"id", t->id}, {"surface", t->surface}});
    }
    entries.push_back({{"tokens", tokens}, {"count", e.count}, {"pmi", e.pmi}});
  }
  json doc{{"schema", kRankingSchema},
           {"corpus_id", ranking.corpus_id},
           {"pattern", std::string(to_string(ranking.pattern))},
           {"min_count", ranking.min_count},
           {"k", ranking.k},
           {"n_tokens", ranking.n_tokens},
           {"entries", entries},
           {"warnings", ranking.warnings}};
  return doc.dump(2) + "\n";
}

PmiRanking ranking_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("ranking file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("schema", std::string()) != kRankingSchema) {
    throw FormatError("ranking schema mismatch: expected " + std::string(kRankingSchema) +
                      ", found '" +
                      (doc.is_object() ? doc.value("schema", std::string("<none>")) : "<none>") +
                      "'");
  }
  try {
    PmiRanking r;
    r.pattern = parse_pattern(doc.at("pattern").get<std::string>());
    r.corpus_id = doc.at("corpus_id").get<std::string>();
    r.min_count = doc.at("min_count").get<std::uint64_t>();
    r.k = doc.at("k").get<std::size_t>();
    r.n_tokens = doc.at("n_tokens").get<std::uint64_t>();
    r.warnings = doc.value("warnings", std::vector<std::string>{});
    for (const auto& e : doc.at("entries")) {
      const auto& toks = e.at("tokens");
      if (toks.size() != 3) throw FormatError("ranking entry must have 3 tokens");
      std::array<Token, 3> t;
      for (std::size_t i = 0; i < 3; ++i) {
        t[i] = Token{toks[i].at("surface").get<std::string>(), toks[i].at("id").get<TokenId>()};
      }
      PmiEntry entry;
      entry.trigram = TriGram::make(t[0], t[1], t[2], r.pattern);
      entry.count = e.at("count").get<std::uint64_t>();
      entry.pmi = e.at("pmi").get<double>();
      r.entries.push_back(std::move(entry));
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed ranking file: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed ranking file: ") + e.what());
  }
}

}  // namespace asrprobe
