#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "asrprobe/pmi.hpp"
#include "asrprobe/scorer.hpp"
#include "asrprobe/stimulus.hpp"

namespace asrprobe {

enum class Setting { RandomRandom, SeenRandom, RandomSeen, SeenSeen };

/// "random-random", "seen-random", "random-seen", "seen-seen" (primes first).
std::string_view to_string(Setting s);
/// Accepts '-' or '/' between the two halves.
Setting parse_setting(std::string_view text);
bool has_seen_primes(Setting s);
bool has_seen_probes(Setting s);
/// AAB, ABA, ABB, plus ABC when probes are random.
std::vector<Pattern> probe_patterns(Setting s);

struct ExperimentConfig {
  Setting setting = Setting::RandomRandom;
  std::size_t probes_per_cycle = 16;
  std::size_t cycles_per_run = 256;
  std::size_t runs = 3;
  std::uint64_t master_seed = 0;
  std::string separator = ".";
  /// Required for every prime pattern in seen settings.
  std::map<Pattern, PmiRanking> rankings;
  /// The run fails when more than this fraction of measurements drop.
  double max_drop_rate = 0.001;
  std::size_t workers = 1;

  std::size_t measurements_per_condition() const {
    return probes_per_cycle * cycles_per_run * runs;
  }
  /// Throws ConfigError.
  void validate() const;
};

// Seed derivation, part of the reproducibility contract:
//   cycle seed = derive_seed(master, {kCycleSeedTag, run, cycle, pattern index})
//   seen split = derive_seed(master, {kSplitSeedTag, pattern index})
// with pattern index AAB=0, ABA=1, ABB=2.
inline constexpr std::uint64_t kCycleSeedTag = 0x6379636c65;  // "cycle"
inline constexpr std::uint64_t kSplitSeedTag = 0x73706c6974;  // "split"

std::uint64_t cycle_seed(std::uint64_t master_seed, std::size_t run, std::size_t cycle,
                         Pattern prime_pattern);

/// Immutable per-experiment state: the validated config, the vocabulary, the
/// resolved separator and any seen material chosen from the rankings.
class ExperimentPlan {
 public:
  ExperimentPlan(ExperimentConfig config, Vocabulary vocab);

  const ExperimentConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  const Token& separator() const { return separator_; }

  /// 16 fixed seen tri-grams, or null when that side is random.
  const std::vector<TriGram>* seen_primes(Pattern prime) const;
  const std::vector<TriGram>* seen_probes(Pattern probe) const;

  /// Token ids random prime material must avoid (the seen probes' tokens).
  const std::vector<TokenId>& seen_probe_tokens() const { return seen_probe_tokens_; }

 private:
  ExperimentConfig config_;
  Vocabulary vocab_;
  Token separator_;
  std::map<Pattern, std::vector<TriGram>> seen_primes_;
  std::map<Pattern, std::vector<TriGram>> seen_probes_;
  std::vector<TokenId> seen_probe_tokens_;
};

struct DroppedProbe {
  TriGram probe;
  std::string reason;
};

struct CycleResult {
  std::size_t run = 0;
  std::size_t cycle = 0;
  Pattern prime_pattern = Pattern::AAB;
  std::uint64_t seed = 0;
  PrimingSequence sequence;
  std::vector<TokenId> rendered;
  std::vector<TokenId> prime_tokens;
  std::vector<TokenId> probe_tokens;
  std::vector<Measurement> measurements;
  std::vector<DroppedProbe> dropped;
};

/// One priming sequence, rendered once, against which every probe of every
/// probe pattern in scope is scored. Draw order from Rng(seed): prime
/// material, probe material, ABC third slots, sequence shuffle.
CycleResult run_cycle(const ExperimentPlan& plan, Pattern prime_pattern, std::uint64_t seed,
                      Scorer& scorer);

struct ConditionKey {
  Pattern prime = Pattern::AAB;
  Pattern probe = Pattern::AAB;

  friend auto operator<=>(const ConditionKey&, const ConditionKey&) = default;
};

struct CellStats {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;

  friend bool operator==(const CellStats&, const CellStats&) = default;
};

struct ResultsTable {
  Setting setting = Setting::RandomRandom;
  std::string scorer;
  std::map<ConditionKey, CellStats> cells;
  std::uint64_t master_seed = 0;
  std::size_t expected_n = 0;

  std::vector<Pattern> prime_rows() const;
  std::vector<Pattern> probe_columns() const;
  const CellStats& at(Pattern prime, Pattern probe) const;

  friend bool operator==(const ResultsTable&, const ResultsTable&) = default;
};

/// Compensated (Neumaier) mean and sample standard deviation.
CellStats summarize(std::span<const double> values);

struct CycleSeed {
  std::size_t run = 0;
  std::size_t cycle = 0;
  Pattern prime = Pattern::AAB;
  std::uint64_t seed = 0;
};

struct DropReport {
  std::size_t total = 0;
  std::size_t attempted = 0;
  std::map<ConditionKey, std::size_t> by_cell;
  /// First few reasons, for the manifest.
  std::vector<std::string> samples;

  double rate() const { return attempted ? static_cast<double>(total) / attempted : 0.0; }
};

struct ExperimentResult {
  ResultsTable table;
  std::vector<CycleSeed> seeds;
  DropReport drops;
  bool failed = false;
  std::string failure;
  /// Filled only with ExperimentOptions::keep_cycles.
  std::vector<CycleResult> cycles;
};

struct ExperimentOptions {
  bool keep_cycles = false;
  /// Called once per cycle in (prime pattern, run, cycle) order after all
  /// work has finished, regardless of the worker count.
  std::function<void(const CycleResult&)> on_cycle;
};

using ScorerFactory = std::function<std::unique_ptr<Scorer>()>;

/// Runs runs x cycles_per_run cycles for each prime pattern on
/// config().workers threads, one scorer per worker. Results do not depend on
/// the worker count.
ExperimentResult run_experiment(const ExperimentPlan& plan, const ScorerFactory& make_scorer,
                                const ExperimentOptions& options = {});
/// Single-threaded on a caller-owned scorer.
ExperimentResult run_experiment(const ExperimentPlan& plan, Scorer& scorer,
                                const ExperimentOptions& options = {});

struct RowVerdict {
  Pattern prime = Pattern::AAB;
  /// Unique row minimum; empty on ties.
  std::optional<Pattern> argmin;
  std::vector<Pattern> minima;
  bool diagonal_min = false;
  /// Empty when the table has no ABC column. True when no other cell in the
  /// row exceeds ABC.
  std::optional<bool> abc_is_max;
};

struct Verdict {
  std::vector<RowVerdict> rows;
  bool human_consistent = false;
};

Verdict classify(const ResultsTable& table);

}  // namespace asrprobe
