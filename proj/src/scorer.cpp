#include "asrprobe/scorer.hpp"

#include <cmath>
#include <sstream>

#include "asrprobe/errors.hpp"

namespace asrprobe {

std::vector<ScoreOutcome> Scorer::score_batch(std::span<const ScoreRequest> requests) {
  std::vector<ScoreOutcome> out(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) {
    try {
      out[i].log2_p = score(requests[i]);
    } catch (const ScoringError& e) {
      out[i].error = e.what();
    } catch (const TransportError& e) {
      out[i].error = std::string("transport: ") + e.what();
    }
  }
  return out;
}

std::string_view to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::Uniform: return "uniform";
    case ScorerKind::Unigram: return "unigram";
    case ScorerKind::PatternOracle: return "pattern-oracle";
    case ScorerKind::External: return "external";
  }
  return "?";
}

namespace {

void check_request(const ScoreRequest& request, std::size_t vocab_size) {
  if (request.context.empty()) throw ScoringError("empty context");
  if (request.target >= vocab_size) {
    throw ScoringError("unknown target token " + std::to_string(request.target));
  }
}

}  // namespace

UniformScorer::UniformScorer(std::size_t vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size == 0) throw ConfigError("uniform scorer needs a non-empty vocabulary");
}

double UniformScorer::score(const ScoreRequest& request) {
  check_request(request, vocab_size_);
  return -std::log2(static_cast<double>(vocab_size_));
}

std::string UniformScorer::name() const { return "uniform:" + std::to_string(vocab_size_); }

UnigramScorer::UnigramScorer(std::map<TokenId, std::uint64_t> counts)
    : counts_(std::move(counts)) {
  for (const auto& [id, c] : counts_) total_ += c;
  if (total_ == 0) throw ConfigError("unigram scorer needs a positive total count");
}

double UnigramScorer::score(const ScoreRequest& request) {
  if (request.context.empty()) throw ScoringError("empty context");
  auto it = counts_.find(request.target);
  if (it == counts_.end() || it->second == 0) {
    throw ScoringError("unknown target token " + std::to_string(request.target));
  }
  return std::log2(static_cast<double>(it->second) / static_cast<double>(total_));
}

PatternOracleScorer::PatternOracleScorer(double alpha, std::size_t vocab_size,
                                         TokenId separator)
    : alpha_(alpha), vocab_size_(vocab_size), separator_(separator) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("oracle alpha must lie in (0, 1)");
  if (vocab_size < 2) throw ConfigError("oracle needs a vocabulary of at least 2 tokens");
  if (separator >= vocab_size) throw ConfigError("oracle separator outside vocabulary");
}

std::string PatternOracleScorer::name() const {
  std::ostringstream os;
  os << "oracle:" << alpha_ << ":" << vocab_size_;
  return os.str();
}

std::optional<Pattern> PatternOracleScorer::infer_pattern(
    std::span<const TokenId> context) const {
  std::array<std::size_t, 3> votes{};
  std::size_t start = 0;
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (context[i] != separator_) continue;
    if (i - start == 3) {
      auto p = pattern_of(context[start], context[start + 1], context[start + 2]);
      if (p && is_prime_pattern(*p)) ++votes[static_cast<std::size_t>(*p)];
    }
    start = i + 1;
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < votes.size(); ++k) {
    if (votes[k] > votes[best]) best = k;
  }
  if (votes[best] == 0) return std::nullopt;
  for (std::size_t k = 0; k < votes.size(); ++k) {
    if (k != best && votes[k] == votes[best]) return std::nullopt;
  }
  return kPrimePatterns[best];
}

std::optional<TokenId> PatternOracleScorer::predict(std::span<const TokenId> context) const {
  const auto pattern = infer_pattern(context);
  if (!pattern) return std::nullopt;

  // Probe prefix: tokens after the last separator.
  std::size_t last_sep = context.size();
  for (std::size_t i = context.size(); i-- > 0;) {
    if (context[i] == separator_) {
      last_sep = i;
      break;
    }
  }
  if (last_sep == context.size()) return std::nullopt;
  const auto prefix = context.subspan(last_sep + 1);

  if (prefix.size() == 1 && *pattern == Pattern::AAB) return prefix[0];
  if (prefix.size() == 2 && *pattern == Pattern::ABA) return prefix[0];
  if (prefix.size() == 2 && *pattern == Pattern::ABB) return prefix[1];
  return std::nullopt;
}

double PatternOracleScorer::score(const ScoreRequest& request) {
  check_request(request, vocab_size_);
  const auto predicted = predict(request.context);
  if (!predicted) return -std::log2(static_cast<double>(vocab_size_));
  if (request.target == *predicted) return std::log2(alpha_);
  return std::log2((1.0 - alpha_) / static_cast<double>(vocab_size_ - 1));
}

std::unique_ptr<Scorer> make_pattern_oracle(double alpha, std::size_t vocab_size,
                                            TokenId separator) {
  return std::make_unique<PatternOracleScorer>(alpha, vocab_size, separator);
}

std::array<ScoreRequest, 3> probe_requests(std::span<const TokenId> rendered_primes,
                                           const TriGram& probe) {
  std::array<ScoreRequest, 3> reqs;
  std::vector<TokenId> ctx(rendered_primes.begin(), rendered_primes.end());
  reqs[0] = {ctx, probe.t1.id};
  ctx.push_back(probe.t1.id);
  reqs[1] = {ctx, probe.t2.id};
  ctx.push_back(probe.t2.id);
  reqs[2] = {std::move(ctx), probe.t3.id};
  return reqs;
}

Measurement make_measurement(Pattern prime_pattern, const TriGram& probe, double log2_p_t1,
                             double log2_p_t2, double log2_p_t3) {
  for (double v : {log2_p_t1, log2_p_t2, log2_p_t3}) {
    if (!std::isfinite(v) || v > 0.0) {
      throw ScoringError("scorer returned an invalid log probability " + std::to_string(v));
    }
  }
  Measurement m;
  m.prime_pattern = prime_pattern;
  m.probe_pattern = probe.pattern;
  m.probe = probe;
  m.log2_p_t1 = log2_p_t1;
  m.log2_p_t2 = log2_p_t2;
  m.log2_p_t3 = log2_p_t3;
  m.surprisal = surprisal_bits(log2_p_t2, log2_p_t3);
  return m;
}

Measurement surprisal(Scorer& scorer, std::span<const TokenId> rendered_primes,
                      TokenId separator, Pattern prime_pattern, const TriGram& probe) {
  if (rendered_primes.empty() || rendered_primes.back() != separator) {
    throw ConfigError("rendered primes must end with the separator");
  }
  const auto reqs = probe_requests(rendered_primes, probe);
  const double p1 = scorer.score(reqs[0]);
  const double p2 = scorer.score(reqs[1]);
  const double p3 = scorer.score(reqs[2]);
  return make_measurement(prime_pattern, probe, p1, p2, p3);
}

}  // namespace asrprobe
