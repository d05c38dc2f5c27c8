#include "asrprobe/backend.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "asrprobe/errors.hpp"

namespace asrprobe {

namespace {

std::size_t parse_size(std::string_view text, std::string_view what) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(std::string(text), &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("bad " + std::string(what) + " '" + std::string(text) + "'");
  }
}

double parse_real(std::string_view text, std::string_view what) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(std::string(text), &pos);
    if (pos != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("bad " + std::string(what) + " '" + std::string(text) + "'");
  }
}

Backend uniform_backend(std::string_view arg, std::string_view separator) {
  const std::size_t v = parse_size(arg, "vocabulary size");
  Backend b;
  b.vocabulary = make_synthetic_vocabulary(v, separator);
  b.factory = [v] { return std::make_unique<UniformScorer>(v); };
  b.descriptor = {UniformScorer(v).name(), ScorerKind::Uniform, false};
  b.metadata = {{"kind", "uniform"}, {"vocab_size", v}};
  return b;
}

Backend oracle_backend(std::string_view arg, std::string_view separator) {
  std::size_t v = 1000;
  std::string_view alpha_text = arg;
  if (auto colon = arg.find(':'); colon != std::string_view::npos) {
    alpha_text = arg.substr(0, colon);
    v = parse_size(arg.substr(colon + 1), "vocabulary size");
  }
  const double alpha = parse_real(alpha_text, "oracle alpha");
  Backend b;
  b.vocabulary = make_synthetic_vocabulary(v, separator);
  const TokenId sep = b.vocabulary.find_surface(separator)->id;
  PatternOracleScorer probe(alpha, v, sep);
  b.factory = [alpha, v, sep] { return make_pattern_oracle(alpha, v, sep); };
  b.descriptor = {probe.name(), ScorerKind::PatternOracle, false};
  b.metadata = {{"kind", "pattern-oracle"}, {"alpha", alpha}, {"vocab_size", v}};
  return b;
}

Backend unigram_backend(std::string_view path) {
  std::ifstream in{std::string(path)};
  if (!in) throw ConfigError("cannot open unigram counts " + std::string(path));
  std::vector<Token> tokens;
  std::map<TokenId, std::uint64_t> counts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string surface;
    std::uint64_t count = 0;
    if (!(ls >> surface >> count)) {
      throw FormatError(std::string(path) + ":" + std::to_string(lineno) +
                        ": expected 'surface count'");
    }
    const auto id = static_cast<TokenId>(tokens.size());
    tokens.push_back({surface, id});
    counts[id] = count;
  }
  Backend b;
  b.vocabulary = Vocabulary(std::move(tokens));
  b.factory = [counts] { return std::make_unique<UnigramScorer>(counts); };
  b.descriptor = {"unigram:" + std::string(path), ScorerKind::Unigram, false};
  b.metadata = {{"kind", "unigram"}, {"vocab_size", b.vocabulary.size()}};
  return b;
}

Backend external_backend(std::string_view spec, const WireOptions& wire,
                         std::string_view separator) {
  const Endpoint ep = Endpoint::parse(spec);
  ExternalConnection conn = external_scorer_connect(ep, wire, separator);
  Backend b;
  b.endpoint = ep;
  b.vocabulary = std::move(conn.vocabulary);
  b.factory = [ep, wire] { return std::make_unique<ExternalScorer>(ep, wire); };
  b.descriptor = {conn.handshake.model.empty() ? ep.to_string() : conn.handshake.model,
                  ScorerKind::External, true};
  std::size_t specials = 0;
  for (TokenId id : b.vocabulary.excluded()) {
    if (id != conn.separator) ++specials;
  }
  b.metadata = {{"kind", "external"},
                {"endpoint", ep.to_string()},
                {"proto", conn.handshake.proto},
                {"model", conn.handshake.model},
                {"vocab_size", conn.handshake.vocab_size},
                {"special_tokens", specials}};
  return b;
}

}  // namespace

Backend open_backend(std::string_view spec, const WireOptions& wire,
                     std::string_view separator) {
  const auto colon = spec.find(':');
  if (colon == std::string_view::npos) {
    throw ConfigError("scorer spec '" + std::string(spec) + "' needs a KIND:ARG form");
  }
  const auto kind = spec.substr(0, colon);
  const auto arg = spec.substr(colon + 1);
  if (kind == "uniform") return uniform_backend(arg, separator);
  if (kind == "oracle") return oracle_backend(arg, separator);
  if (kind == "unigram") return unigram_backend(arg);
  if (kind == "exec" || kind == "tcp") return external_backend(spec, wire, separator);
  throw ConfigError("unknown scorer kind '" + std::string(kind) + "'");
}

}  // namespace asrprobe
