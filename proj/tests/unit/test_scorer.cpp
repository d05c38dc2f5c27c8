#include <doctest.h>

#include <cmath>
#include <vector>

#include "asrprobe/errors.hpp"
#include "asrprobe/scorer.hpp"

using namespace asrprobe;

namespace {

/// Records every call and answers from a fixed table keyed by context length.
class RecordingScorer final : public Scorer {
 public:
  std::vector<ScoreRequest> calls;
  std::vector<double> answers;

  double score(const ScoreRequest& r) override {
    calls.push_back(r);
    return answers.at(calls.size() - 1);
  }
  std::string name() const override { return "recording"; }
};

class CertainScorer final : public Scorer {
 public:
  double score(const ScoreRequest&) override { return 0.0; }
  std::string name() const override { return "certain"; }
};

const Token kA{"a", 1}, kB{"b", 2}, kC{"c", 3}, kD{"d", 4};

std::vector<TokenId> aba_primes() {
  // Three ABA tri-grams, separator 0.
  return {5, 6, 5, 0, 7, 8, 7, 0, 9, 6, 9, 0};
}

}  // namespace

TEST_SUITE("scorer") {

TEST_CASE("uniform scorer: S = 2 log2 V") {
  UniformScorer u(1024);
  const auto probe = instantiate(Pattern::AAB, kA, kB);
  std::vector<TokenId> primes{1, 1, 2, 0};
  auto m = surprisal(u, primes, 0, Pattern::AAB, probe);
  CHECK(m.log2_p_t2 == -10.0);
  CHECK(m.surprisal == 20.0);
  CHECK_THROWS_AS(u.score({{1}, 1024}), ScoringError);
  CHECK(u.name() == "uniform:1024");
}

TEST_CASE("unigram scorer") {
  UnigramScorer s({{1, 3}, {2, 1}});
  CHECK(s.score({{0}, 1}) == doctest::Approx(std::log2(0.75)).epsilon(1e-15));
  CHECK_THROWS_AS(s.score({{0}, 9}), ScoringError);
  // Probe (a, b, b): S = -(log2 1/4 + log2 1/4) = 4.
  auto m = surprisal(s, std::vector<TokenId>{1, 0}, 0, Pattern::ABB,
                     instantiate(Pattern::ABB, kA, kB));
  CHECK(m.surprisal == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("certain scorer gives zero surprisal") {
  CertainScorer s;
  auto m = surprisal(s, std::vector<TokenId>{1, 0}, 0, Pattern::AAB,
                     instantiate(Pattern::ABC, kA, kB, &kC));
  CHECK(m.surprisal == 0.0);
}

TEST_CASE("surprisal makes three calls with growing contexts and ignores t1") {
  RecordingScorer r;
  r.answers = {-7.0, -2.0, -3.0};
  const std::vector<TokenId> primes{1, 1, 2, 0};
  const auto probe = instantiate(Pattern::ABA, kC, kD);
  auto m = surprisal(r, primes, 0, Pattern::AAB, probe);
  REQUIRE(r.calls.size() == 3);
  CHECK(r.calls[0].context == primes);
  CHECK(r.calls[0].target == 3);
  CHECK(r.calls[1].context == std::vector<TokenId>{1, 1, 2, 0, 3});
  CHECK(r.calls[1].target == 4);
  CHECK(r.calls[2].context == std::vector<TokenId>{1, 1, 2, 0, 3, 4});
  CHECK(r.calls[2].target == 3);
  CHECK(m.log2_p_t1 == -7.0);
  CHECK(m.surprisal == 5.0);
}

TEST_CASE("surprisal preconditions and measurement validation") {
  UniformScorer u(10);
  const auto probe = instantiate(Pattern::AAB, kA, kB);
  CHECK_THROWS_AS(surprisal(u, std::vector<TokenId>{1, 1, 2}, 0, Pattern::AAB, probe),
                  ConfigError);
  CHECK_THROWS_AS(make_measurement(Pattern::AAB, probe, -1, 0.5, -1), ScoringError);
  CHECK_THROWS_AS(make_measurement(Pattern::AAB, probe, -1, NAN, -1), ScoringError);
  auto m = make_measurement(Pattern::AAB, probe, -1, -2, -3);
  CHECK(m.surprisal >= 0);
}

TEST_CASE("ln to log2 conversion") {
  CHECK(ln_to_log2(std::log(0.25)) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(ln_to_log2(0.0) == 0.0);
}

TEST_CASE("pattern oracle infers the majority pattern") {
  PatternOracleScorer o(0.9, 50, 0);
  CHECK(o.infer_pattern(aba_primes()) == Pattern::ABA);
  CHECK_FALSE(o.infer_pattern(std::vector<TokenId>{5, 6}).has_value());
  // One AAB, one ABB: tie.
  CHECK_FALSE(o.infer_pattern(std::vector<TokenId>{5, 5, 6, 0, 7, 8, 8, 0}).has_value());
  // Majority ABB beats a single AAB.
  CHECK(o.infer_pattern(std::vector<TokenId>{5, 5, 6, 0, 7, 8, 8, 0, 9, 3, 3, 0}) ==
        Pattern::ABB);
}

TEST_CASE("pattern oracle predictions by position") {
  PatternOracleScorer o(0.9, 50, 0);
  auto ctx = aba_primes();
  CHECK_FALSE(o.predict(ctx).has_value());  // first probe token is free
  ctx.push_back(20);
  CHECK_FALSE(o.predict(ctx).has_value());  // ABA: B is free
  ctx.push_back(21);
  CHECK(o.predict(ctx) == 20u);  // ABA: third repeats the first

  std::vector<TokenId> aab{5, 5, 6, 0, 20};
  CHECK(o.predict(aab) == 20u);
  std::vector<TokenId> abb{5, 6, 6, 0, 20, 21};
  CHECK(o.predict(abb) == 21u);
}

TEST_CASE("pattern oracle distributions sum to one") {
  const std::size_t V = 50;
  PatternOracleScorer o(0.9, V, 0);
  std::vector<std::vector<TokenId>> contexts = {
      aba_primes(),
      {5, 6, 5, 0, 7, 8, 7, 0, 20},
      {5, 6, 5, 0, 7, 8, 7, 0, 20, 21},
      {5, 5, 6, 0, 20},
      {5, 6, 6, 0, 20, 21},
      {3, 4},
  };
  for (const auto& ctx : contexts) {
    double total = 0.0;
    for (TokenId t = 0; t < V; ++t) total += std::exp2(o.score({ctx, t}));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  // The predicted token is the argmax and carries alpha.
  std::vector<TokenId> ctx{5, 6, 5, 0, 20, 21};
  CHECK(o.score({ctx, 20}) == doctest::Approx(std::log2(0.9)).epsilon(1e-15));
  for (TokenId t = 0; t < V; ++t) {
    if (t != 20) CHECK(o.score({ctx, t}) < o.score({ctx, 20}));
  }
  CHECK_THROWS_AS(PatternOracleScorer(1.5, V, 0), ConfigError);
}

TEST_CASE("oracle surprisal: consistent below inconsistent, ABC ties inconsistent") {
  const std::size_t V = 1000;
  const double alpha = 0.9;
  PatternOracleScorer o(alpha, V, 0);
  // Primes: AAB sequence.
  std::vector<TokenId> primes;
  for (int i = 0; i < 16; ++i) {
    TokenId a = 100 + (i % 2), b = 200 + (i / 2 % 2);
    primes.insert(primes.end(), {a, a, b, 0});
  }
  const Token a{"p", 300}, b{"q", 400}, c{"r", 301};
  const double rest = std::log2((1 - alpha) / (V - 1));
  const double uni = std::log2(1.0 / V);
  auto s = [&](Pattern p) {
    return surprisal(o, primes, 0, Pattern::AAB,
                     p == Pattern::ABC ? instantiate(p, a, b, &c) : instantiate(p, a, b))
        .surprisal;
  };
  CHECK(s(Pattern::AAB) == doctest::Approx(-(std::log2(alpha) + uni)).epsilon(1e-12));
  CHECK(s(Pattern::ABA) == doctest::Approx(-(rest + uni)).epsilon(1e-12));
  CHECK(s(Pattern::ABB) == doctest::Approx(-(rest + uni)).epsilon(1e-12));
  CHECK(s(Pattern::ABC) == s(Pattern::ABA));
  CHECK(s(Pattern::AAB) < s(Pattern::ABA));
}

}
