#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "asrprobe/rng.hpp"

namespace asrprobe {

using TokenId = std::uint32_t;

struct Token {
  std::string surface;
  TokenId id = 0;

  friend bool operator==(const Token&, const Token&) = default;
};

/// Ordered token inventory plus the ids that must never be drawn as stimulus
/// material (special tokens, the separator, user denylist).
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<Token> tokens);

  void exclude(TokenId id);
  void exclude_surface(std::string_view surface);

  bool contains(TokenId id) const { return index_.count(id) != 0; }
  bool is_excluded(TokenId id) const { return excluded_.count(id) != 0; }
  bool is_eligible(TokenId id) const { return contains(id) && !is_excluded(id); }

  /// Throws ConfigError for an unknown id.
  const Token& at(TokenId id) const;
  const Token* find_surface(std::string_view surface) const;

  /// Eligible tokens in vocabulary order.
  std::vector<Token> eligible() const;
  std::size_t eligible_count() const { return tokens_.size() - excluded_.size(); }

  std::size_t size() const { return tokens_.size(); }
  const std::vector<Token>& tokens() const { return tokens_; }
  const std::set<TokenId>& excluded() const { return excluded_; }

 private:
  std::vector<Token> tokens_;
  std::unordered_map<TokenId, std::size_t> index_;
  std::unordered_map<std::string, std::size_t> by_surface_;
  std::set<TokenId> excluded_;
};

/// Vocabulary of `size` tokens: id 0 is `separator` (excluded), ids 1.. are
/// "w1", "w2", ...
Vocabulary make_synthetic_vocabulary(std::size_t size, std::string_view separator = ".");

enum class Pattern { AAB, ABA, ABB, ABC };

inline constexpr std::array<Pattern, 3> kPrimePatterns = {Pattern::AAB, Pattern::ABA,
                                                          Pattern::ABB};
inline constexpr std::array<Pattern, 4> kAllPatterns = {Pattern::AAB, Pattern::ABA,
                                                        Pattern::ABB, Pattern::ABC};

std::string_view to_string(Pattern p);
/// Accepts "AAB"/"aab" etc. Throws ConfigError otherwise.
Pattern parse_pattern(std::string_view text);
bool is_prime_pattern(Pattern p);

/// The pattern a concrete id triple instantiates (AAA has none).
std::optional<Pattern> pattern_of(TokenId t1, TokenId t2, TokenId t3);

struct TriGram {
  Token t1, t2, t3;
  Pattern pattern = Pattern::ABC;

  /// Validates the repetition structure against `pattern`; throws ConfigError.
  static TriGram make(Token t1, Token t2, Token t3, Pattern pattern);

  bool valid() const;
  std::array<TokenId, 3> ids() const { return {t1.id, t2.id, t3.id}; }

  friend bool operator==(const TriGram&, const TriGram&) = default;
};

/// Builds the tri-gram for `pattern` from an A token, a B token and, for ABC
/// only, a C token.
TriGram instantiate(Pattern pattern, const Token& a, const Token& b, const Token* c = nullptr);

struct PrimeMaterial {
  std::array<Token, 2> a;
  std::array<Token, 2> b;

  std::vector<TokenId> ids() const;
};

struct ProbeMaterial {
  std::array<Token, 4> a;
  std::array<Token, 4> b;

  std::vector<TokenId> ids() const;
};

/// Draws 2 A + 2 B tokens without replacement from the eligible pool, minus
/// `also_exclude`. The first two draws become A, the next two B.
PrimeMaterial select_prime_material(const Vocabulary& vocab, Rng& rng,
                                    std::span<const TokenId> also_exclude = {});

/// Draws 4 A + 4 B tokens disjoint from `prime_tokens`.
ProbeMaterial select_probe_material(const Vocabulary& vocab, Rng& rng,
                                    std::span<const TokenId> prime_tokens);
ProbeMaterial select_probe_material(const Vocabulary& vocab, Rng& rng,
                                    const PrimeMaterial& exclude);

/// The A x B cross product in `pattern`, A-major. Throws ConfigError for ABC.
std::vector<TriGram> generate_prime_trigrams(const PrimeMaterial& material, Pattern pattern);

/// 16 probes, A-major over the 4 x 4 cross product. For ABC the third slot is
/// drawn uniformly from the other three A tokens.
std::vector<TriGram> generate_probe_trigrams(const ProbeMaterial& material, Pattern pattern,
                                             Rng& rng);

inline constexpr std::size_t kSequenceLength = 16;

struct PrimingSequence {
  Pattern pattern = Pattern::AAB;
  std::vector<TriGram> trigrams;
  std::uint64_t seed_trace = 0;
};

/// Expands `trigrams` `repetitions` times and shuffles. Requires
/// trigrams.size() * repetitions == 16, one shared prime pattern and distinct
/// input tri-grams.
PrimingSequence build_priming_sequence(std::span<const TriGram> trigrams,
                                       std::size_t repetitions, Rng& rng);

/// Tokens of every tri-gram followed by `separator`, including after the last.
std::vector<Token> render_sequence(const PrimingSequence& seq, const Token& separator);
std::vector<TokenId> render_ids(const PrimingSequence& seq, TokenId separator);

/// Space-separated surfaces, one line, no trailing newline.
std::string join_surfaces(std::span<const Token> tokens);

}  // namespace asrprobe
