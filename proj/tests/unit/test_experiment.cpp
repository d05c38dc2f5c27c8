#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>

#include "asrprobe/errors.hpp"
#include "asrprobe/experiment.hpp"
#include "asrprobe/report.hpp"
#include "support/fixtures.hpp"

using namespace asrprobe;
using asrprobe::testing::synthetic_rankings;
using asrprobe::testing::table_from;

namespace {

ExperimentConfig small_config(Setting s = Setting::RandomRandom, std::size_t cycles = 8,
                              std::size_t runs = 2) {
  ExperimentConfig c;
  c.setting = s;
  c.cycles_per_run = cycles;
  c.runs = runs;
  c.master_seed = 1234;
  return c;
}

/// Fails every n-th request with a per-request error.
class FlakyScorer final : public Scorer {
 public:
  explicit FlakyScorer(std::size_t every) : every_(every) {}
  double score(const ScoreRequest& r) override {
    if (++calls_ % every_ == 0) throw ScoringError("flaky");
    return inner_.score(r);
  }
  std::string name() const override { return "flaky"; }

 private:
  std::size_t every_;
  std::size_t calls_ = 0;
  UniformScorer inner_{1000};
};

std::set<TokenId> ids_of(const std::vector<TriGram>& grams) {
  std::set<TokenId> out;
  for (const auto& g : grams) out.insert(g.t1.id), out.insert(g.t2.id), out.insert(g.t3.id);
  return out;
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("settings and config validation") {
  CHECK(parse_setting("seen/random") == Setting::SeenRandom);
  CHECK(to_string(Setting::RandomSeen) == "random-seen");
  CHECK(probe_patterns(Setting::RandomSeen).size() == 3);
  CHECK(probe_patterns(Setting::SeenRandom).size() == 4);
  CHECK_THROWS_AS(parse_setting("seen"), ConfigError);

  ExperimentConfig c;
  CHECK(c.measurements_per_condition() == 12288);
  c.setting = Setting::SeenRandom;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.setting = Setting::RandomRandom;
  c.probes_per_cycle = 17;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("cycle seeds follow the documented derivation") {
  CHECK(cycle_seed(9, 1, 2, Pattern::ABB) == derive_seed(9, {0x6379636c65, 1, 2, 2}));
  std::set<std::uint64_t> seeds;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 256; ++c)
      for (Pattern p : kPrimePatterns) seeds.insert(cycle_seed(0, r, c, p));
  CHECK(seeds.size() == 3 * 256 * 3);
}

TEST_CASE("one random cycle: counts and disjointness") {
  ExperimentPlan plan(small_config(), make_synthetic_vocabulary(1000));
  UniformScorer u(1000);
  for (Pattern prime : kPrimePatterns) {
    auto cyc = run_cycle(plan, prime, 77, u);
    CHECK(cyc.sequence.trigrams.size() == 16);
    CHECK(cyc.rendered.size() == 64);
    CHECK(cyc.measurements.size() == 64);
    CHECK(cyc.dropped.empty());
    std::set<TokenId> primes(cyc.prime_tokens.begin(), cyc.prime_tokens.end());
    for (TokenId t : cyc.probe_tokens) CHECK_FALSE(primes.count(t));
    for (const auto& m : cyc.measurements) {
      CHECK(m.prime_pattern == prime);
      CHECK(m.surprisal == doctest::Approx(2 * std::log2(1000.0)).epsilon(1e-12));
    }
    auto again = run_cycle(plan, prime, 77, u);
    CHECK(again.rendered == cyc.rendered);
    CHECK(again.probe_tokens == cyc.probe_tokens);
  }
}

TEST_CASE("probes_per_cycle truncates") {
  auto cfg = small_config();
  cfg.probes_per_cycle = 5;
  ExperimentPlan plan(cfg, make_synthetic_vocabulary(1000));
  UniformScorer u(1000);
  CHECK(run_cycle(plan, Pattern::AAB, 1, u).measurements.size() == 20);
}

TEST_CASE("uniform scorer: every cell is 2 log2 V, no pattern is consistent") {
  ExperimentPlan plan(small_config(), make_synthetic_vocabulary(1000));
  UniformScorer u(1000);
  auto result = run_experiment(plan, u);
  CHECK_FALSE(result.failed);
  CHECK(result.table.cells.size() == 12);
  for (const auto& [key, cell] : result.table.cells) {
    CHECK(cell.n == 16 * 8 * 2);
    CHECK(std::abs(cell.mean - 2 * std::log2(1000.0)) < 1e-9);
  }
  auto v = classify(result.table);
  CHECK_FALSE(v.human_consistent);
  for (const auto& row : v.rows) CHECK_FALSE(row.argmin.has_value());
}

TEST_CASE("pattern oracle: closed-form cells and a consistent verdict") {
  const std::size_t V = 1000;
  const double alpha = 0.9;
  auto vocab = make_synthetic_vocabulary(V);
  ExperimentPlan plan(small_config(), vocab);
  PatternOracleScorer o(alpha, V, 0);
  auto result = run_experiment(plan, o);
  const double diag = -(std::log2(alpha) + std::log2(1.0 / V));
  const double off = -(std::log2((1 - alpha) / (V - 1)) + std::log2(1.0 / V));
  for (const auto& [key, cell] : result.table.cells) {
    CHECK(cell.mean == doctest::Approx(key.prime == key.probe ? diag : off).epsilon(1e-12));
  }
  auto v = classify(result.table);
  CHECK(v.human_consistent);
  for (const auto& row : v.rows) {
    CHECK(row.argmin == row.prime);
    CHECK(row.abc_is_max == true);
    CHECK(result.table.at(row.prime, Pattern::ABC).mean ==
          result.table.at(row.prime, row.prime == Pattern::AAB ? Pattern::ABA : Pattern::AAB).mean);
  }
}

TEST_CASE("results do not depend on the worker count") {
  auto vocab = make_synthetic_vocabulary(500);
  auto cfg = small_config(Setting::RandomRandom, 12, 2);
  ExperimentPlan one(cfg, vocab);
  cfg.workers = 4;
  ExperimentPlan four(cfg, vocab);
  auto factory = [] { return make_pattern_oracle(0.7, 500, 0); };
  auto a = run_experiment(one, factory);
  auto b = run_experiment(four, factory);
  CHECK(a.table == b.table);
  CHECK(report_to_json(a.table, classify(a.table)).dump() ==
        report_to_json(b.table, classify(b.table)).dump());
}

TEST_CASE("same seed, same stimuli; different seed, different stimuli") {
  auto vocab = make_synthetic_vocabulary(500);
  ExperimentOptions keep;
  keep.keep_cycles = true;
  UniformScorer u(500);
  auto a = run_experiment(ExperimentPlan(small_config(), vocab), u, keep);
  auto b = run_experiment(ExperimentPlan(small_config(), vocab), u, keep);
  auto cfg = small_config();
  cfg.master_seed = 1235;
  auto c = run_experiment(ExperimentPlan(cfg, vocab), u, keep);
  REQUIRE(a.cycles.size() == b.cycles.size());
  for (std::size_t i = 0; i < a.cycles.size(); ++i) CHECK(a.cycles[i].rendered == b.cycles[i].rendered);
  CHECK(a.cycles.front().rendered != c.cycles.front().rendered);
  REQUIRE(a.seeds.size() == 3 * 8 * 2);
  CHECK(a.seeds[0].seed == cycle_seed(1234, a.seeds[0].run, a.seeds[0].cycle, a.seeds[0].prime));
}

TEST_CASE("on_cycle sees cycles in canonical order") {
  auto cfg = small_config(Setting::RandomRandom, 4, 2);
  cfg.workers = 3;
  ExperimentPlan plan(cfg, make_synthetic_vocabulary(300));
  std::vector<std::tuple<Pattern, std::size_t, std::size_t>> order;
  ExperimentOptions opts;
  opts.on_cycle = [&](const CycleResult& c) { order.emplace_back(c.prime_pattern, c.run, c.cycle); };
  run_experiment(plan, [] { return std::make_unique<UniformScorer>(300); }, opts);
  REQUIRE(order.size() == 24);
  CHECK(std::is_sorted(order.begin(), order.end()));
}

TEST_CASE("drop policy") {
  auto vocab = make_synthetic_vocabulary(1000);
  SUBCASE("drops under the threshold are reported, cells shrink") {
    auto cfg = small_config(Setting::RandomRandom, 4, 1);
    cfg.max_drop_rate = 0.5;
    ExperimentPlan plan(cfg, vocab);
    FlakyScorer f(97);
    auto r = run_experiment(plan, f);
    CHECK_FALSE(r.failed);
    CHECK(r.drops.total > 0);
    std::size_t n = 0;
    for (const auto& [k, cell] : r.table.cells) n += cell.n;
    CHECK(n + r.drops.total == r.drops.attempted);
    CHECK_FALSE(r.drops.samples.empty());
  }
  SUBCASE("too many drops fail the run") {
    auto cfg = small_config(Setting::RandomRandom, 4, 1);
    ExperimentPlan plan(cfg, vocab);
    FlakyScorer f(10);
    auto r = run_experiment(plan, f);
    CHECK(r.failed);
    CHECK(r.drops.rate() > 0.001);
  }
}

TEST_CASE("seen settings use ranked material") {
  auto vocab = make_synthetic_vocabulary(3000);
  auto rankings = synthetic_rankings(vocab);
  UniformScorer u(3000);

  SUBCASE("seen-seen: disjoint prime and probe tri-grams, 16 distinct primes") {
    auto cfg = small_config(Setting::SeenSeen, 2, 1);
    cfg.rankings = rankings;
    ExperimentPlan plan(cfg, vocab);
    for (Pattern p : kPrimePatterns) {
      REQUIRE(plan.seen_primes(p));
      REQUIRE(plan.seen_probes(p));
      std::set<std::array<TokenId, 3>> primes, probes;
      for (const auto& g : *plan.seen_primes(p)) primes.insert(g.ids());
      for (const auto& g : *plan.seen_probes(p)) probes.insert(g.ids());
      CHECK(primes.size() == 16);
      CHECK(probes.size() == 16);
      for (const auto& g : primes) CHECK_FALSE(probes.count(g));
    }
    auto cyc = run_cycle(plan, Pattern::ABA, 5, u);
    std::set<std::array<TokenId, 3>> uniq;
    for (const auto& g : cyc.sequence.trigrams) uniq.insert(g.ids());
    CHECK(uniq.size() == 16);
    CHECK(cyc.measurements.size() == 48);
    auto r = run_experiment(plan, u);
    CHECK(r.table.probe_columns().size() == 3);
  }

  SUBCASE("seen-random: random probes avoid seen prime tokens") {
    auto cfg = small_config(Setting::SeenRandom, 2, 1);
    cfg.rankings = rankings;
    ExperimentPlan plan(cfg, vocab);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto cyc = run_cycle(plan, Pattern::AAB, seed, u);
      const auto seen = ids_of(*plan.seen_primes(Pattern::AAB));
      for (TokenId t : cyc.probe_tokens) CHECK_FALSE(seen.count(t));
      CHECK(cyc.measurements.size() == 64);
    }
  }

  SUBCASE("random-seen: random primes avoid every seen probe token") {
    auto cfg = small_config(Setting::RandomSeen, 2, 1);
    cfg.rankings = rankings;
    ExperimentPlan plan(cfg, vocab);
    const std::set<TokenId> avoid(plan.seen_probe_tokens().begin(), plan.seen_probe_tokens().end());
    CHECK(avoid.size() == 3 * 16 * 2);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      auto cyc = run_cycle(plan, Pattern::ABB, seed, u);
      for (TokenId t : cyc.prime_tokens) CHECK_FALSE(avoid.count(t));
      CHECK(cyc.measurements.size() == 48);
    }
  }

  SUBCASE("short rankings are rejected") {
    auto cfg = small_config(Setting::SeenSeen, 2, 1);
    cfg.rankings = synthetic_rankings(vocab, 20);
    CHECK_THROWS_AS(ExperimentPlan(cfg, vocab), ConfigError);
  }
}

TEST_CASE("summarize: compensated mean, sample std, order independence") {
  std::vector<double> v{1, 2, 3, 4};
  auto s = summarize(v);
  CHECK(s.mean == 2.5);
  CHECK(s.std == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));
  CHECK(s.n == 4);
  CHECK(std::isnan(summarize(std::vector<double>{}).mean));

  std::vector<double> big{1e16, 1.0, -1e16, 1.0};
  CHECK(summarize(big).mean == 0.5);

  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> d(5, 80);
  std::vector<double> xs(12288);
  for (auto& x : xs) x = d(gen);
  const auto base = summarize(xs);
  for (int i = 0; i < 5; ++i) {
    std::shuffle(xs.begin(), xs.end(), gen);
    auto p = summarize(xs);
    CHECK(std::abs(p.mean - base.mean) < 1e-9);
    CHECK(std::abs(p.std - base.std) < 1e-9);
  }
}

TEST_CASE("classify: BERT reference table is not human-consistent") {
  auto t = table_from({{73.24, 72.13, 70.27, 74.31},
                       {71.38, 70.16, 68.41, 72.08},
                       {72.47, 71.09, 69.41, 73.18}});
  auto v = classify(t);
  CHECK_FALSE(v.human_consistent);
  for (const auto& row : v.rows) {
    CHECK(row.argmin == Pattern::ABB);
    CHECK(row.abc_is_max == true);
  }
  CHECK(v.rows[2].diagonal_min);
}

TEST_CASE("classify: diagonal table is human-consistent, ties are not") {
  auto good = classify(table_from({{1, 2, 2, 3}, {2, 1, 2, 3}, {2, 2, 1, 3}}));
  CHECK(good.human_consistent);
  auto tied = classify(table_from({{1, 1, 2, 3}, {2, 1, 2, 3}, {2, 2, 1, 3}}));
  CHECK_FALSE(tied.human_consistent);
  CHECK_FALSE(tied.rows[0].argmin.has_value());
  CHECK(tied.rows[0].minima.size() == 2);
  auto abc_low = classify(table_from({{1, 2, 4, 3}, {2, 1, 2, 3}, {2, 2, 1, 3}}));
  CHECK_FALSE(abc_low.human_consistent);
  CHECK(abc_low.rows[0].abc_is_max == false);
}

TEST_CASE("classify: seen-probe table without ABC") {
  auto t = table_from({{44.67, 50.87, 47.00}, {43.93, 50.05, 46.01}, {44.74, 51.01, 47.02}},
                      Setting::RandomSeen);
  auto v = classify(t);
  for (const auto& row : v.rows) {
    CHECK(row.argmin == Pattern::AAB);
    CHECK_FALSE(row.abc_is_max.has_value());
  }
  CHECK_FALSE(v.human_consistent);
}

}
