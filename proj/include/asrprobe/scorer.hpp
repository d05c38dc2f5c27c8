#pragma once

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "asrprobe/stimulus.hpp"

namespace asrprobe {

struct ScoreRequest {
  std::vector<TokenId> context;
  TokenId target = 0;
};

/// Result slot for batched scoring. `error` is empty on success.
struct ScoreOutcome {
  double log2_p = 0.0;
  std::string error;

  bool ok() const { return error.empty(); }
};

/// The single place where natural-log probabilities become bits.
inline double ln_to_log2(double ln_p) { return ln_p / std::log(2.0); }

/// log2 P(target | context).
class Scorer {
 public:
  virtual ~Scorer() = default;

  /// Throws ScoringError for unresolvable tokens, TransportError for backend
  /// failures.
  virtual double score(const ScoreRequest& request) = 0;

  /// Scores every request; per-request failures land in the outcome instead
  /// of throwing. The default loops over score().
  virtual std::vector<ScoreOutcome> score_batch(std::span<const ScoreRequest> requests);

  virtual std::string name() const = 0;
};

enum class ScorerKind { Uniform, Unigram, PatternOracle, External };

std::string_view to_string(ScorerKind kind);

struct ScorerDescriptor {
  std::string name;
  ScorerKind kind = ScorerKind::Uniform;
  bool vocabulary_from_scorer = false;
};

class UniformScorer final : public Scorer {
 public:
  explicit UniformScorer(std::size_t vocab_size);

  double score(const ScoreRequest& request) override;
  std::string name() const override;

 private:
  std::size_t vocab_size_;
};

/// Context-free unigram model over explicit counts.
class UnigramScorer final : public Scorer {
 public:
  explicit UnigramScorer(std::map<TokenId, std::uint64_t> counts);

  double score(const ScoreRequest& request) override;
  std::string name() const override { return "unigram"; }

 private:
  std::map<TokenId, std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

/// Test double that behaves like an ideal sameness-relation learner: it reads
/// the separator-delimited tri-grams in the context, takes the majority
/// pattern among AAB/ABA/ABB and, if that pattern fixes the next probe token,
/// puts `alpha` on it and spreads the rest uniformly. Otherwise uniform.
class PatternOracleScorer final : public Scorer {
 public:
  PatternOracleScorer(double alpha, std::size_t vocab_size, TokenId separator);

  double score(const ScoreRequest& request) override;
  std::string name() const override;

  /// Majority prime pattern among complete tri-grams; none on ties or when no
  /// tri-gram parses.
  std::optional<Pattern> infer_pattern(std::span<const TokenId> context) const;
  /// The token the inferred pattern forces at the next position, if any.
  std::optional<TokenId> predict(std::span<const TokenId> context) const;

 private:
  double alpha_;
  std::size_t vocab_size_;
  TokenId separator_;
};

std::unique_ptr<Scorer> make_pattern_oracle(double alpha, std::size_t vocab_size,
                                            TokenId separator);

/// One probe scored after one priming sequence.
struct Measurement {
  Pattern prime_pattern = Pattern::AAB;
  Pattern probe_pattern = Pattern::AAB;
  TriGram probe;
  double log2_p_t1 = 0.0;
  double log2_p_t2 = 0.0;
  double log2_p_t3 = 0.0;
  double surprisal = 0.0;
};

/// S = -(log2 P_t2 + log2 P_t3). P_t1 is kept on the record but not summed.
inline double surprisal_bits(double log2_p_t2, double log2_p_t3) {
  return -(log2_p_t2 + log2_p_t3);
}

/// The three requests P(t1|primes), P(t2|primes,t1), P(t3|primes,t1,t2).
std::array<ScoreRequest, 3> probe_requests(std::span<const TokenId> rendered_primes,
                                           const TriGram& probe);

/// Builds the record from three log2 probabilities. Throws ScoringError if any
/// is positive or non-finite.
Measurement make_measurement(Pattern prime_pattern, const TriGram& probe, double log2_p_t1,
                             double log2_p_t2, double log2_p_t3);

/// Issues exactly three score calls. `rendered_primes` must end with
/// `separator`.
Measurement surprisal(Scorer& scorer, std::span<const TokenId> rendered_primes,
                      TokenId separator, Pattern prime_pattern, const TriGram& probe);

}  // namespace asrprobe
