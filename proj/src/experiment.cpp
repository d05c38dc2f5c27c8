#include "asrprobe/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "asrprobe/errors.hpp"

namespace asrprobe {

std::string_view to_string(Setting s) {
  switch (s) {
    case Setting::RandomRandom: return "random-random";
    case Setting::SeenRandom: return "seen-random";
    case Setting::RandomSeen: return "random-seen";
    case Setting::SeenSeen: return "seen-seen";
  }
  return "?";
}

Setting parse_setting(std::string_view text) {
  std::string norm(text);
  std::replace(norm.begin(), norm.end(), '/', '-');
  for (Setting s : {Setting::RandomRandom, Setting::SeenRandom, Setting::RandomSeen,
                    Setting::SeenSeen}) {
    if (to_string(s) == norm) return s;
  }
  throw ConfigError("unknown setting '" + std::string(text) +
                    "' (expected random-random, seen-random, random-seen or seen-seen)");
}

bool has_seen_primes(Setting s) { return s == Setting::SeenRandom || s == Setting::SeenSeen; }
bool has_seen_probes(Setting s) { return s == Setting::RandomSeen || s == Setting::SeenSeen; }

std::vector<Pattern> probe_patterns(Setting s) {
  if (has_seen_probes(s)) return {kPrimePatterns.begin(), kPrimePatterns.end()};
  return {kAllPatterns.begin(), kAllPatterns.end()};
}

void ExperimentConfig::validate() const {
  if (probes_per_cycle == 0 || probes_per_cycle > 16) {
    throw ConfigError("probes_per_cycle must be in [1, 16]");
  }
  if (cycles_per_run == 0 || runs == 0) throw ConfigError("cycles and runs must be positive");
  if (!(max_drop_rate >= 0.0 && max_drop_rate <= 1.0)) {
    throw ConfigError("max_drop_rate must lie in [0, 1]");
  }
  if (has_seen_primes(setting) || has_seen_probes(setting)) {
    for (Pattern p : kPrimePatterns) {
      auto it = rankings.find(p);
      if (it == rankings.end()) {
        throw ConfigError("setting " + std::string(to_string(setting)) + " needs a " +
                          std::string(to_string(p)) + " ranking");
      }
      if (it->second.pattern != p) {
        throw ConfigError("ranking registered for " + std::string(to_string(p)) +
                          " holds " + std::string(to_string(it->second.pattern)) + " tri-grams");
      }
    }
  }
}

namespace {

std::uint64_t pattern_index(Pattern p) { return static_cast<std::uint64_t>(p); }

std::vector<TriGram> resolve_against(const std::vector<TriGram>& trigrams,
                                     const Vocabulary& vocab) {
  std::vector<TriGram> out;
  out.reserve(trigrams.size());
  for (const TriGram& g : trigrams) {
    for (TokenId id : g.ids()) {
      if (!vocab.is_eligible(id)) {
        throw ConfigError("seen tri-gram token " + std::to_string(id) +
                          " is not an eligible vocabulary token");
      }
    }
    out.push_back(TriGram::make(vocab.at(g.t1.id), vocab.at(g.t2.id), vocab.at(g.t3.id),
                                g.pattern));
  }
  return out;
}

}  // namespace

std::uint64_t cycle_seed(std::uint64_t master_seed, std::size_t run, std::size_t cycle,
                         Pattern prime_pattern) {
  return derive_seed(master_seed,
                     {kCycleSeedTag, run, cycle, pattern_index(prime_pattern)});
}

ExperimentPlan::ExperimentPlan(ExperimentConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  const Token* sep = vocab_.find_surface(config_.separator);
  if (!sep) {
    throw ConfigError("separator '" + config_.separator + "' is not in the vocabulary");
  }
  separator_ = *sep;
  vocab_.exclude(separator_.id);

  const Setting s = config_.setting;
  const bool both = has_seen_primes(s) && has_seen_probes(s);
  for (Pattern p : kPrimePatterns) {
    if (!has_seen_primes(s) && !has_seen_probes(s)) break;
    Rng rng(derive_seed(config_.master_seed, {kSplitSeedTag, pattern_index(p)}));
    const SeenRole role = both ? SeenRole::Both
                               : (has_seen_primes(s) ? SeenRole::Primes : SeenRole::Probes);
    SeenSelection sel = select_seen_material(config_.rankings.at(p), role, rng);
    if (!sel.primes.empty()) seen_primes_[p] = resolve_against(sel.primes, vocab_);
    if (!sel.probes.empty()) seen_probes_[p] = resolve_against(sel.probes, vocab_);
  }

  std::set<TokenId> probe_ids;
  for (const auto& [p, probes] : seen_probes_) {
    for (const TriGram& g : probes) {
      for (TokenId id : g.ids()) probe_ids.insert(id);
    }
  }
  seen_probe_tokens_.assign(probe_ids.begin(), probe_ids.end());
}

const std::vector<TriGram>* ExperimentPlan::seen_primes(Pattern prime) const {
  auto it = seen_primes_.find(prime);
  return it == seen_primes_.end() ? nullptr : &it->second;
}

const std::vector<TriGram>* ExperimentPlan::seen_probes(Pattern probe) const {
  auto it = seen_probes_.find(probe);
  return it == seen_probes_.end() ? nullptr : &it->second;
}

CycleResult run_cycle(const ExperimentPlan& plan, Pattern prime_pattern, std::uint64_t seed,
                      Scorer& scorer) {
  if (!is_prime_pattern(prime_pattern)) throw ConfigError("ABC is not a valid prime pattern");
  const ExperimentConfig& cfg = plan.config();
  const Vocabulary& vocab = plan.vocabulary();
  Rng rng(seed);

  CycleResult out;
  out.prime_pattern = prime_pattern;
  out.seed = seed;

  // Primes.
  std::vector<TriGram> prime_trigrams;
  std::size_t repetitions = 4;
  if (const auto* seen = plan.seen_primes(prime_pattern)) {
    prime_trigrams = *seen;
    repetitions = 1;
    std::set<TokenId> ids;
    for (const TriGram& g : prime_trigrams) {
      for (TokenId id : g.ids()) ids.insert(id);
    }
    out.prime_tokens.assign(ids.begin(), ids.end());
  } else {
    const PrimeMaterial material = select_prime_material(vocab, rng, plan.seen_probe_tokens());
    prime_trigrams = generate_prime_trigrams(material, prime_pattern);
    out.prime_tokens = material.ids();
  }

  // Probes.
  std::vector<TriGram> probes;
  const auto patterns = probe_patterns(cfg.setting);
  if (has_seen_probes(cfg.setting)) {
    std::set<TokenId> ids;
    for (Pattern p : patterns) {
      const auto& seen = *plan.seen_probes(p);
      probes.insert(probes.end(), seen.begin(),
                    seen.begin() + static_cast<std::ptrdiff_t>(cfg.probes_per_cycle));
      for (const TriGram& g : seen) {
        for (TokenId id : g.ids()) ids.insert(id);
      }
    }
    out.probe_tokens.assign(ids.begin(), ids.end());
  } else {
    const ProbeMaterial material = select_probe_material(vocab, rng, out.prime_tokens);
    out.probe_tokens = material.ids();
    for (Pattern p : patterns) {
      auto generated = generate_probe_trigrams(material, p, rng);
      probes.insert(probes.end(), generated.begin(),
                    generated.begin() + static_cast<std::ptrdiff_t>(cfg.probes_per_cycle));
    }
  }

  out.sequence = build_priming_sequence(prime_trigrams, repetitions, rng);
  out.rendered = render_ids(out.sequence, plan.separator().id);

  std::vector<ScoreRequest> requests;
  requests.reserve(probes.size() * 3);
  for (const TriGram& probe : probes) {
    for (auto& r : probe_requests(out.rendered, probe)) requests.push_back(std::move(r));
  }
  const auto outcomes = scorer.score_batch(requests);
  if (outcomes.size() != requests.size()) {
    throw ScoringError("scorer returned " + std::to_string(outcomes.size()) + " results for " +
                       std::to_string(requests.size()) + " requests");
  }

  out.measurements.reserve(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const ScoreOutcome* o = &outcomes[3 * i];
    std::string reason;
    for (int k = 0; k < 3 && reason.empty(); ++k) {
      if (!o[k].ok()) reason = o[k].error;
    }
    if (reason.empty()) {
      try {
        out.measurements.push_back(make_measurement(prime_pattern, probes[i], o[0].log2_p,
                                                     o[1].log2_p, o[2].log2_p));
        continue;
      } catch (const ScoringError& e) {
        reason = e.what();
      }
    }
    out.dropped.push_back({probes[i], std::move(reason)});
  }
  return out;
}

std::vector<Pattern> ResultsTable::prime_rows() const {
  std::set<Pattern> rows;
  for (const auto& [key, cell] : cells) rows.insert(key.prime);
  return {rows.begin(), rows.end()};
}

std::vector<Pattern> ResultsTable::probe_columns() const {
  std::set<Pattern> cols;
  for (const auto& [key, cell] : cells) cols.insert(key.probe);
  return {cols.begin(), cols.end()};
}

const CellStats& ResultsTable::at(Pattern prime, Pattern probe) const {
  auto it = cells.find({prime, probe});
  if (it == cells.end()) {
    throw ConfigError("table has no cell " + std::string(to_string(probe)) + "|" +
                      std::string(to_string(prime)));
  }
  return it->second;
}

namespace {

struct NeumaierSum {
  double sum = 0.0;
  double carry = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::fabs(sum) >= std::fabs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + carry; }
};

}  // namespace

CellStats summarize(std::span<const double> values) {
  CellStats s;
  s.n = values.size();
  if (values.empty()) {
    s.mean = std::numeric_limits<double>::quiet_NaN();
    s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  NeumaierSum total;
  for (double v : values) total.add(v);
  s.mean = total.value() / static_cast<double>(values.size());
  if (values.size() < 2) return s;
  NeumaierSum sq;
  for (double v : values) sq.add((v - s.mean) * (v - s.mean));
  s.std = std::sqrt(sq.value() / static_cast<double>(values.size() - 1));
  return s;
}

namespace {

template <typename Error>
[[noreturn]] void rethrow_with_cycle(const Error& e, const CycleSeed& id) {
  throw Error("cycle " + std::string(to_string(id.prime)) + " primes, run " +
              std::to_string(id.run) + ", cycle " + std::to_string(id.cycle) + " (seed " +
              std::to_string(id.seed) + "): " + e.what());
}

CycleResult run_identified(const ExperimentPlan& plan, const CycleSeed& id, Scorer& scorer) {
  try {
    CycleResult r = run_cycle(plan, id.prime, id.seed, scorer);
    r.run = id.run;
    r.cycle = id.cycle;
    return r;
  } catch (const ConfigError& e) {
    rethrow_with_cycle(e, id);
  } catch (const ScoringError& e) {
    rethrow_with_cycle(e, id);
  } catch (const TransportError& e) {
    rethrow_with_cycle(e, id);
  } catch (const ProtocolError& e) {
    rethrow_with_cycle(e, id);
  }
}

std::vector<CycleSeed> schedule(const ExperimentConfig& cfg) {
  std::vector<CycleSeed> seeds;
  seeds.reserve(kPrimePatterns.size() * cfg.runs * cfg.cycles_per_run);
  for (Pattern p : kPrimePatterns) {
    for (std::size_t run = 0; run < cfg.runs; ++run) {
      for (std::size_t cycle = 0; cycle < cfg.cycles_per_run; ++cycle) {
        seeds.push_back({run, cycle, p, cycle_seed(cfg.master_seed, run, cycle, p)});
      }
    }
  }
  return seeds;
}

ExperimentResult aggregate(const ExperimentPlan& plan, const std::string& scorer_name,
                           std::vector<CycleSeed> seeds, std::vector<CycleResult> cycles,
                           const ExperimentOptions& options) {
  const ExperimentConfig& cfg = plan.config();
  ExperimentResult result;
  result.table.setting = cfg.setting;
  result.table.scorer = scorer_name;
  result.table.master_seed = cfg.master_seed;
  result.table.expected_n = cfg.measurements_per_condition();

  std::map<ConditionKey, std::vector<double>> values;
  for (Pattern prime : kPrimePatterns) {
    for (Pattern probe : probe_patterns(cfg.setting)) {
      values[{prime, probe}].reserve(result.table.expected_n);
      result.drops.by_cell[{prime, probe}] = 0;
    }
  }
  for (const CycleResult& c : cycles) {
    for (const Measurement& m : c.measurements) {
      values[{m.prime_pattern, m.probe_pattern}].push_back(m.surprisal);
    }
    for (const DroppedProbe& d : c.dropped) {
      ++result.drops.by_cell[{c.prime_pattern, d.probe.pattern}];
      ++result.drops.total;
      if (result.drops.samples.size() < 20) result.drops.samples.push_back(d.reason);
    }
    result.drops.attempted += c.measurements.size() + c.dropped.size();
    if (options.on_cycle) options.on_cycle(c);
  }
  for (const auto& [key, v] : values) result.table.cells[key] = summarize(v);

  if (result.drops.rate() > cfg.max_drop_rate) {
    result.failed = true;
    result.failure = std::to_string(result.drops.total) + " of " +
                     std::to_string(result.drops.attempted) +
                     " measurements dropped, above the allowed rate " +
                     std::to_string(cfg.max_drop_rate);
  }
  result.seeds = std::move(seeds);
  if (options.keep_cycles) result.cycles = std::move(cycles);
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, Scorer& scorer,
                                const ExperimentOptions& options) {
  auto seeds = schedule(plan.config());
  std::vector<CycleResult> cycles;
  cycles.reserve(seeds.size());
  for (const CycleSeed& id : seeds) cycles.push_back(run_identified(plan, id, scorer));
  return aggregate(plan, scorer.name(), std::move(seeds), std::move(cycles), options);
}

ExperimentResult run_experiment(const ExperimentPlan& plan, const ScorerFactory& make_scorer,
                                const ExperimentOptions& options) {
  const std::size_t workers = std::max<std::size_t>(1, plan.config().workers);
  if (workers == 1) {
    auto scorer = make_scorer();
    return run_experiment(plan, *scorer, options);
  }

  auto seeds = schedule(plan.config());
  std::vector<CycleResult> cycles(seeds.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex error_mu;
  std::exception_ptr first_error;
  std::string scorer_name;

  auto work = [&](std::size_t worker) {
    try {
      auto scorer = make_scorer();
      if (worker == 0) {
        std::lock_guard lock(error_mu);
        scorer_name = scorer->name();
      }
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= seeds.size() || abort.load()) return;
        cycles[i] = run_identified(plan, seeds[i], *scorer);
      }
    } catch (...) {
      std::lock_guard lock(error_mu);
      if (!first_error) first_error = std::current_exception();
      abort.store(true);
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work, w);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return aggregate(plan, scorer_name, std::move(seeds), std::move(cycles), options);
}

Verdict classify(const ResultsTable& table) {
  Verdict verdict;
  verdict.human_consistent = true;
  const auto columns = table.probe_columns();
  const bool has_abc = std::find(columns.begin(), columns.end(), Pattern::ABC) != columns.end();

  for (Pattern prime : table.prime_rows()) {
    RowVerdict row;
    row.prime = prime;
    bool has_nan = false;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
    for (Pattern probe : columns) {
      const double v = table.at(prime, probe).mean;
      if (std::isnan(v)) {
        has_nan = true;
        continue;
      }
      min = std::min(min, v);
      max = std::max(max, v);
    }
    if (!has_nan) {
      for (Pattern probe : columns) {
        if (table.at(prime, probe).mean == min) row.minima.push_back(probe);
      }
      if (row.minima.size() == 1) row.argmin = row.minima.front();
      if (has_abc) row.abc_is_max = table.at(prime, Pattern::ABC).mean == max;
    } else if (has_abc) {
      row.abc_is_max = false;
    }
    row.diagonal_min = row.argmin == prime;
    if (!row.diagonal_min || !row.abc_is_max.value_or(true)) verdict.human_consistent = false;
    verdict.rows.push_back(std::move(row));
  }
  if (verdict.rows.empty()) verdict.human_consistent = false;
  return verdict;
}

}  // namespace asrprobe
