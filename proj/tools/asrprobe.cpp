// asrprobe: mine seen tri-grams, run priming experiments, render reports.
//
// Exit codes:
//   0  success
//   1  unexpected internal error
//   2  configuration or input-format error
//   3  scorer transport or protocol error
//   4  degenerate but successful (empty or short PMI rankings)
//   5  run completed but failed its drop-rate check

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "asrprobe/backend.hpp"
#include "asrprobe/corpus.hpp"
#include "asrprobe/errors.hpp"
#include "asrprobe/experiment.hpp"
#include "asrprobe/pmi.hpp"
#include "asrprobe/report.hpp"

namespace fs = std::filesystem;
using namespace asrprobe;

namespace {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kTransport = 3,
  kDegenerate = 4,
  kRunFailed = 5,
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << content;
}

std::size_t default_workers() {
  return std::max(1u, std::thread::hardware_concurrency());
}

struct WireFlags {
  std::size_t max_in_flight = 64;
  long timeout_ms = 30000;
  int attempts = 3;

  WireOptions options() const {
    return {max_in_flight, std::chrono::milliseconds(timeout_ms), attempts};
  }
};

void add_wire_flags(CLI::App* cmd, WireFlags& w) {
  cmd->add_option("--max-in-flight", w.max_in_flight, "Outstanding requests per connection")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--timeout-ms", w.timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
  cmd->add_option("--attempts", w.attempts, "Attempts per request before it is dropped")
      ->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------- mine-pmi

struct MineArgs {
  std::vector<std::string> corpora;
  std::string format = "auto";
  std::vector<std::string> patterns = {"AAB", "ABA", "ABB"};
  std::uint64_t min_count = kDefaultMinCount;
  std::size_t top = kDefaultTopK;
  std::string out;
  std::string corpus_id;
  std::uint64_t max_tokens = 0;
  std::size_t workers = 0;
  std::vector<TokenId> exclude_ids;
  std::string scorer;
  std::string separator = ".";
  WireFlags wire;
};

int cmd_mine(const MineArgs& a) {
  std::optional<Backend> backend;
  std::unique_ptr<ExternalScorer> tokenizer_conn;
  if (!a.scorer.empty()) {
    backend = open_backend(a.scorer, a.wire.options(), a.separator);
    if (const Token* sep = backend->vocabulary.find_surface(a.separator)) {
      backend->vocabulary.exclude(sep->id);
    }
  }
  const CorpusFormat format = parse_corpus_format(a.format);
  Tokenizer tokenizer;
  if (format == CorpusFormat::Raw) {
    if (!backend || !backend->endpoint) {
      throw ConfigError("raw corpora need an external --scorer that can tokenize");
    }
    tokenizer_conn = std::make_unique<ExternalScorer>(*backend->endpoint, a.wire.options());
    tokenizer = [&](std::string_view text) { return tokenizer_conn->client().tokenize(text); };
  }

  std::unordered_set<TokenId> excluded(a.exclude_ids.begin(), a.exclude_ids.end());
  if (backend) {
    for (TokenId id : backend->vocabulary.excluded()) excluded.insert(id);
  }

  std::vector<Pattern> patterns;
  for (const auto& p : a.patterns) {
    const Pattern pat = parse_pattern(p);
    if (!is_prime_pattern(pat)) throw ConfigError("ABC tri-grams are not mined");
    patterns.push_back(pat);
  }

  const std::size_t workers = a.workers ? a.workers : default_workers();
  ShardedScanner scanner(workers, excluded);
  std::uint64_t tokens = 0, documents = 0;
  bool capped = false;
  for (const auto& path : a.corpora) {
    if (capped) break;
    for_each_document(
        path, format,
        [&](std::span<const TokenId> doc) {
          if (capped) return;
          if (a.max_tokens && tokens + doc.size() >= a.max_tokens) {
            doc = doc.first(static_cast<std::size_t>(a.max_tokens - tokens));
            capped = true;
          }
          scanner.add_document(doc);
          tokens += doc.size();
          ++documents;
        },
        tokenizer);
    std::cerr << "scanned " << path << ": " << documents << " documents, " << tokens
              << " tokens so far\n";
  }
  const CorpusStats stats = scanner.finish();
  std::cerr << "merged " << workers << " shard(s): " << stats.n_tokens << " tokens, "
            << stats.n_windows << " windows, " << stats.trigram_counts.size()
            << " distinct sameness tri-grams\n";

  std::string corpus_id = a.corpus_id;
  if (corpus_id.empty()) {
    for (const auto& c : a.corpora) corpus_id += (corpus_id.empty() ? "" : "+") +
                                                 fs::path(c).filename().string();
  }

  fs::create_directories(a.out);
  bool degenerate = false;
  for (Pattern p : patterns) {
    const PmiRanking r = rank_top(stats, p, a.min_count, a.top,
                                  backend ? &backend->vocabulary : nullptr, corpus_id);
    const fs::path file = fs::path(a.out) / ("ranking_" + std::string(to_string(p)) + ".json");
    write_file(file, ranking_to_json(r));
    std::cerr << to_string(p) << ": " << r.entries.size() << " entries -> " << file.string()
              << "\n";
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    if (r.entries.size() < a.top) degenerate = true;
  }
  return degenerate ? kDegenerate : kOk;
}

// --------------------------------------------------------------------- run

struct RunArgs {
  std::string setting = "random-random";
  std::string scorer;
  std::optional<std::uint64_t> seed;
  std::size_t cycles = 256;
  std::size_t runs = 3;
  std::size_t probes = 16;
  std::vector<std::string> rankings;
  std::string out;
  std::size_t workers = 0;
  std::string format = "text";
  std::string separator = ".";
  std::vector<std::string> deny;
  double max_drop_rate = 0.001;
  std::string dump_stimuli;
  bool record_timing = false;
  WireFlags wire;
};

int cmd_run(const RunArgs& a) {
  const auto started = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.setting = parse_setting(a.setting);
  cfg.cycles_per_run = a.cycles;
  cfg.runs = a.runs;
  cfg.probes_per_cycle = a.probes;
  cfg.separator = a.separator;
  cfg.max_drop_rate = a.max_drop_rate;
  if (a.seed) {
    cfg.master_seed = *a.seed;
  } else {
    std::random_device rd;
    cfg.master_seed = (static_cast<std::uint64_t>(rd()) << 32) | rd();
    std::cerr << "no --seed given, using seed " << cfg.master_seed << "\n";
  }

  for (const auto& path : a.rankings) {
    PmiRanking r = ranking_from_json(read_file(path));
    const Pattern p = r.pattern;
    if (!cfg.rankings.emplace(p, std::move(r)).second) {
      throw ConfigError("two rankings given for " + std::string(to_string(p)));
    }
  }
  if ((has_seen_primes(cfg.setting) || has_seen_probes(cfg.setting)) && a.rankings.empty()) {
    throw ConfigError("setting " + a.setting + " needs --ranking files for AAB, ABA and ABB");
  }
  cfg.validate();

  if (a.scorer.empty()) throw ConfigError("--scorer is required (or set ASRPROBE_SCORER)");
  Backend backend = open_backend(a.scorer, a.wire.options(), a.separator);
  // One model process per worker is expensive; external scorers default to 1.
  cfg.workers = a.workers ? a.workers
                          : (backend.descriptor.kind == ScorerKind::External ? 1
                                                                              : default_workers());
  for (const auto& surface : a.deny) backend.vocabulary.exclude_surface(surface);

  const ExperimentPlan plan(cfg, backend.vocabulary);
  ExperimentOptions opts;
  std::ofstream stim_txt, stim_jsonl;
  if (!a.dump_stimuli.empty()) {
    stim_txt.open(a.dump_stimuli + ".txt");
    stim_jsonl.open(a.dump_stimuli + ".jsonl");
    if (!stim_txt || !stim_jsonl) throw FormatError("cannot write stimuli to " + a.dump_stimuli);
    opts.on_cycle = [&](const CycleResult& c) {
      stim_txt << stimulus_line(c, plan.vocabulary()) << '\n';
      stim_jsonl << stimulus_record(c).dump() << '\n';
    };
  }

  ExperimentResult result = run_experiment(plan, backend.factory, opts);
  result.table.scorer = backend.descriptor.name;
  const Verdict verdict = classify(result.table);

  RunManifest manifest;
  manifest.config = config_to_json(cfg);
  manifest.scorer = {{"spec", a.scorer},
                     {"name", backend.descriptor.name},
                     {"kind", std::string(to_string(backend.descriptor.kind))},
                     {"vocabulary_from_scorer", backend.descriptor.vocabulary_from_scorer},
                     {"handshake", backend.metadata},
                     {"denylist", a.deny}};
  manifest.seeds = result.seeds;
  manifest.drops = result.drops;
  manifest.failed = result.failed;
  manifest.failure = result.failure;
  manifest.ranking_files = a.rankings;
  if (a.record_timing) {
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started);
    manifest.timing = {{"wall_seconds", elapsed.count()}, {"workers", cfg.workers}};
  }

  fs::create_directories(a.out);
  const fs::path out(a.out);
  write_file(out / "report.json", emit(result.table, verdict, ReportFormat::Json));
  write_file(out / "report.txt", emit(result.table, verdict, ReportFormat::Text));
  write_file(out / "report.csv", emit(result.table, verdict, ReportFormat::Csv));
  write_file(out / "manifest.json", manifest_to_json(manifest));

  std::cout << emit(result.table, verdict, parse_report_format(a.format));
  if (result.drops.total) {
    std::cerr << "dropped " << result.drops.total << " of " << result.drops.attempted
              << " measurements\n";
  }
  if (result.failed) {
    std::cerr << "run failed: " << result.failure << "\n";
    return kRunFailed;
  }
  return kOk;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "text";
  std::string out;
};

int cmd_report(const ReportArgs& a) {
  std::vector<ReportSection> sections;
  for (const auto& in : a.inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) p /= "report.json";
    sections.push_back(parse_report(read_file(p)));
  }
  std::string rendered;
  switch (parse_report_format(a.format)) {
    case ReportFormat::Text: rendered = render_text(sections); break;
    case ReportFormat::Csv: rendered = render_csv(sections); break;
    case ReportFormat::Json: rendered = render_json(sections); break;
  }
  if (a.out.empty()) {
    std::cout << rendered;
  } else {
    write_file(a.out, rendered);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probe language-model scorers for abstract sameness relations"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option defaults; flags override it");
  app.set_version_flag("--version", std::string(kToolVersion));

  MineArgs mine;
  auto* mine_cmd = app.add_subcommand("mine-pmi", "Rank sameness tri-grams of a corpus by PMI");
  mine_cmd->add_option("corpus", mine.corpora, "Corpus files")->required()->check(CLI::ExistingFile);
  mine_cmd->add_option("--format", mine.format, "auto, text, bin or raw")
      ->check(CLI::IsMember({"auto", "text", "bin", "binary", "raw"}));
  mine_cmd->add_option("--patterns", mine.patterns, "Patterns to rank")->delimiter(',');
  mine_cmd->add_option("--min-count", mine.min_count, "Minimum tri-gram count");
  mine_cmd->add_option("--top", mine.top, "Ranking length")->check(CLI::PositiveNumber);
  mine_cmd->add_option("--out", mine.out, "Output directory")->required();
  mine_cmd->add_option("--corpus-id", mine.corpus_id, "Identifier stored in the rankings");
  mine_cmd->add_option("--max-tokens", mine.max_tokens, "Stop after this many tokens (0 = all)");
  mine_cmd->add_option("--workers", mine.workers, "Scan threads (default: all cores)");
  mine_cmd->add_option("--exclude-ids", mine.exclude_ids, "Token ids never admitted to tri-grams")
      ->delimiter(',');
  mine_cmd->add_option("--scorer", mine.scorer, "Scorer supplying vocabulary and tokenization")
      ->envname("ASRPROBE_SCORER");
  mine_cmd->add_option("--separator", mine.separator, "Separator surface");
  add_wire_flags(mine_cmd, mine.wire);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Run a priming experiment");
  run_cmd->add_option("--setting", run.setting, "random-random, seen-random, random-seen, seen-seen");
  run_cmd->add_option("--scorer", run.scorer, "uniform:V, oracle:A[:V], unigram:PATH, exec:CMD, tcp:H:P")
      ->envname("ASRPROBE_SCORER");
  run_cmd->add_option("--seed", run.seed, "Master seed (random and printed when absent)");
  run_cmd->add_option("--cycles", run.cycles, "Cycles per run")->check(CLI::PositiveNumber);
  run_cmd->add_option("--runs", run.runs, "Runs")->check(CLI::PositiveNumber);
  run_cmd->add_option("--probes", run.probes, "Probes per pattern per cycle (1-16)")
      ->check(CLI::Range(1, 16));
  run_cmd->add_option("--ranking", run.rankings, "PMI ranking files for seen settings")
      ->check(CLI::ExistingFile);
  run_cmd->add_option("--out", run.out, "Output directory")->required();
  run_cmd->add_option("--workers", run.workers, "Worker threads");
  run_cmd->add_option("--format", run.format, "Stdout format: text, csv, json")
      ->check(CLI::IsMember({"text", "csv", "json"}));
  run_cmd->add_option("--separator", run.separator, "Separator surface");
  run_cmd->add_option("--deny", run.deny, "Token surfaces never drawn as material");
  run_cmd->add_option("--max-drop-rate", run.max_drop_rate, "Allowed fraction of dropped measurements");
  run_cmd->add_option("--dump-stimuli", run.dump_stimuli, "Write PREFIX.txt and PREFIX.jsonl");
  run_cmd->add_flag("--record-timing", run.record_timing, "Store wall-clock timing in the manifest");
  add_wire_flags(run_cmd, run.wire);

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "Render one or more run reports side by side");
  report_cmd->add_option("inputs", report.inputs, "report.json files or run directories")
      ->required();
  report_cmd->add_option("--format", report.format, "text, csv or json")
      ->check(CLI::IsMember({"text", "csv", "json"}));
  report_cmd->add_option("--out", report.out, "Write here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Error& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*mine_cmd) return cmd_mine(mine);
    if (*run_cmd) return cmd_run(run);
    if (*report_cmd) return cmd_report(report);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kTransport;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kTransport;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInternal;
}
