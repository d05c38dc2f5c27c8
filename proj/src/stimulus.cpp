#include "asrprobe/stimulus.hpp"

#include <algorithm>
#include <cctype>

#include "asrprobe/errors.hpp"

namespace asrprobe {

Vocabulary::Vocabulary(std::vector<Token> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  by_surface_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const Token& t = tokens_[i];
    if (t.surface.empty()) {
      throw ConfigError("token " + std::to_string(t.id) + " has an empty surface");
    }
    if (!index_.emplace(t.id, i).second) {
      throw ConfigError("duplicate token id " + std::to_string(t.id));
    }
    // First occurrence wins for surface lookups; byte-level vocabularies may
    // map several ids to one printable surface.
    by_surface_.emplace(t.surface, i);
  }
}

void Vocabulary::exclude(TokenId id) {
  if (!contains(id)) throw ConfigError("cannot exclude unknown token id " + std::to_string(id));
  excluded_.insert(id);
}

void Vocabulary::exclude_surface(std::string_view surface) {
  for (const Token& t : tokens_) {
    if (t.surface == surface) excluded_.insert(t.id);
  }
}

const Token& Vocabulary::at(TokenId id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw ConfigError("unknown token id " + std::to_string(id));
  return tokens_[it->second];
}

const Token* Vocabulary::find_surface(std::string_view surface) const {
  auto it = by_surface_.find(std::string(surface));
  return it == by_surface_.end() ? nullptr : &tokens_[it->second];
}

std::vector<Token> Vocabulary::eligible() const {
  std::vector<Token> out;
  out.reserve(eligible_count());
  for (const Token& t : tokens_) {
    if (!is_excluded(t.id)) out.push_back(t);
  }
  return out;
}

Vocabulary make_synthetic_vocabulary(std::size_t size, std::string_view separator) {
  if (size < 2) throw ConfigError("synthetic vocabulary needs at least 2 tokens");
  std::vector<Token> tokens;
  tokens.reserve(size);
  tokens.push_back({std::string(separator), 0});
  for (std::size_t i = 1; i < size; ++i) {
    tokens.push_back({"w" + std::to_string(i), static_cast<TokenId>(i)});
  }
  Vocabulary vocab(std::move(tokens));
  vocab.exclude(0);
  return vocab;
}

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::AAB: return "AAB";
    case Pattern::ABA: return "ABA";
    case Pattern::ABB: return "ABB";
    case Pattern::ABC: return "ABC";
  }
  return "?";
}

Pattern parse_pattern(std::string_view text) {
  std::string upper(text);
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (Pattern p : kAllPatterns) {
    if (to_string(p) == upper) return p;
  }
  throw ConfigError("unknown pattern '" + std::string(text) + "'");
}

bool is_prime_pattern(Pattern p) { return p != Pattern::ABC; }

std::optional<Pattern> pattern_of(TokenId t1, TokenId t2, TokenId t3) {
  const bool e12 = t1 == t2, e13 = t1 == t3, e23 = t2 == t3;
  if (e12 && e13) return std::nullopt;
  if (e12) return Pattern::AAB;
  if (e13) return Pattern::ABA;
  if (e23) return Pattern::ABB;
  return Pattern::ABC;
}

bool TriGram::valid() const { return pattern_of(t1.id, t2.id, t3.id) == pattern; }

TriGram TriGram::make(Token t1, Token t2, Token t3, Pattern pattern) {
  TriGram g{std::move(t1), std::move(t2), std::move(t3), pattern};
  if (!g.valid()) {
    throw ConfigError("tokens " + g.t1.surface + " " + g.t2.surface + " " + g.t3.surface +
                      " do not form a " + std::string(to_string(pattern)) + " tri-gram");
  }
  return g;
}

TriGram instantiate(Pattern pattern, const Token& a, const Token& b, const Token* c) {
  switch (pattern) {
    case Pattern::AAB: return TriGram::make(a, a, b, pattern);
    case Pattern::ABA: return TriGram::make(a, b, a, pattern);
    case Pattern::ABB: return TriGram::make(a, b, b, pattern);
    case Pattern::ABC:
      if (c == nullptr) throw ConfigError("ABC tri-gram needs a third token");
      return TriGram::make(a, b, *c, pattern);
  }
  throw ConfigError("invalid pattern");
}

std::vector<TokenId> PrimeMaterial::ids() const {
  return {a[0].id, a[1].id, b[0].id, b[1].id};
}

std::vector<TokenId> ProbeMaterial::ids() const {
  std::vector<TokenId> out;
  for (const Token& t : a) out.push_back(t.id);
  for (const Token& t : b) out.push_back(t.id);
  return out;
}

namespace {

// Partial Fisher-Yates over the eligible pool in vocabulary order: position i
// is swapped with a uniform pick from [i, n).
std::vector<Token> draw_without_replacement(const Vocabulary& vocab, std::size_t count,
                                            std::span<const TokenId> skip, Rng& rng,
                                            const char* what) {
  std::vector<Token> pool;
  pool.reserve(vocab.eligible_count());
  std::set<TokenId> skip_set(skip.begin(), skip.end());
  for (const Token& t : vocab.tokens()) {
    if (!vocab.is_excluded(t.id) && skip_set.count(t.id) == 0) pool.push_back(t);
  }
  if (pool.size() < count) {
    throw ConfigError(std::string(what) + " needs " + std::to_string(count) +
                      " eligible tokens but only " + std::to_string(pool.size()) +
                      " are available (short by " + std::to_string(count - pool.size()) + ")");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

PrimeMaterial select_prime_material(const Vocabulary& vocab, Rng& rng,
                                    std::span<const TokenId> also_exclude) {
  auto drawn = draw_without_replacement(vocab, 4, also_exclude, rng, "prime material");
  return PrimeMaterial{{drawn[0], drawn[1]}, {drawn[2], drawn[3]}};
}

ProbeMaterial select_probe_material(const Vocabulary& vocab, Rng& rng,
                                    std::span<const TokenId> prime_tokens) {
  auto drawn = draw_without_replacement(vocab, 8, prime_tokens, rng, "probe material");
  ProbeMaterial m;
  std::copy_n(drawn.begin(), 4, m.a.begin());
  std::copy_n(drawn.begin() + 4, 4, m.b.begin());
  return m;
}

ProbeMaterial select_probe_material(const Vocabulary& vocab, Rng& rng,
                                    const PrimeMaterial& exclude) {
  const auto ids = exclude.ids();
  return select_probe_material(vocab, rng, ids);
}

std::vector<TriGram> generate_prime_trigrams(const PrimeMaterial& material, Pattern pattern) {
  if (!is_prime_pattern(pattern)) {
    throw ConfigError("ABC is not a valid prime pattern");
  }
  std::vector<TriGram> out;
  out.reserve(4);
  for (const Token& a : material.a) {
    for (const Token& b : material.b) out.push_back(instantiate(pattern, a, b));
  }
  return out;
}

std::vector<TriGram> generate_probe_trigrams(const ProbeMaterial& material, Pattern pattern,
                                             Rng& rng) {
  std::vector<TriGram> out;
  out.reserve(16);
  for (std::size_t i = 0; i < material.a.size(); ++i) {
    for (const Token& b : material.b) {
      if (pattern != Pattern::ABC) {
        out.push_back(instantiate(pattern, material.a[i], b));
        continue;
      }
      // Pick among the other A tokens: index k in [0, 3) skips i.
      auto k = static_cast<std::size_t>(rng.below(material.a.size() - 1));
      if (k >= i) ++k;
      out.push_back(instantiate(pattern, material.a[i], b, &material.a[k]));
    }
  }
  return out;
}

PrimingSequence build_priming_sequence(std::span<const TriGram> trigrams,
                                       std::size_t repetitions, Rng& rng) {
  if (trigrams.empty() || repetitions == 0 ||
      trigrams.size() * repetitions != kSequenceLength) {
    throw ConfigError("priming sequence needs tri-grams x repetitions = 16, got " +
                      std::to_string(trigrams.size()) + " x " + std::to_string(repetitions));
  }
  const Pattern pattern = trigrams.front().pattern;
  if (!is_prime_pattern(pattern)) throw ConfigError("ABC is not a valid prime pattern");
  for (std::size_t i = 0; i < trigrams.size(); ++i) {
    if (trigrams[i].pattern != pattern || !trigrams[i].valid()) {
      throw ConfigError("priming tri-grams must all be valid " + std::string(to_string(pattern)));
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (trigrams[i].ids() == trigrams[j].ids()) {
        throw ConfigError("priming tri-grams must be distinct before repetition");
      }
    }
  }

  PrimingSequence seq;
  seq.pattern = pattern;
  seq.seed_trace = rng.seed();
  seq.trigrams.reserve(kSequenceLength);
  for (std::size_t r = 0; r < repetitions; ++r) {
    seq.trigrams.insert(seq.trigrams.end(), trigrams.begin(), trigrams.end());
  }
  shuffle(std::span<TriGram>(seq.trigrams), rng);
  return seq;
}

std::vector<Token> render_sequence(const PrimingSequence& seq, const Token& separator) {
  std::vector<Token> out;
  out.reserve(seq.trigrams.size() * 4);
  for (const TriGram& g : seq.trigrams) {
    out.push_back(g.t1);
    out.push_back(g.t2);
    out.push_back(g.t3);
    out.push_back(separator);
  }
  return out;
}

std::vector<TokenId> render_ids(const PrimingSequence& seq, TokenId separator) {
  std::vector<TokenId> out;
  out.reserve(seq.trigrams.size() * 4);
  for (const TriGram& g : seq.trigrams) {
    out.insert(out.end(), {g.t1.id, g.t2.id, g.t3.id, separator});
  }
  return out;
}

std::string join_surfaces(std::span<const Token> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i].surface;
  }
  return out;
}

}  // namespace asrprobe
