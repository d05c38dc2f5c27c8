#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>
#include <sstream>

#include "asrprobe/backend.hpp"
#include "asrprobe/errors.hpp"
#include "asrprobe/experiment.hpp"
#include "asrprobe/pmi.hpp"
#include "asrprobe/report.hpp"
#include "asrprobe/scorer.hpp"

namespace py = pybind11;
using namespace asrprobe;
using nlohmann::json;

namespace {

/// Scorer backed by a Python callable (context, target) -> log2 p.
class PyScorer final : public Scorer {
 public:
  explicit PyScorer(py::function fn) : fn_(std::move(fn)) {}
  double score(const ScoreRequest& r) override {
    py::gil_scoped_acquire gil;
    try {
      return fn_(r.context, r.target).cast<double>();
    } catch (py::error_already_set& e) {
      // Python failures become per-probe drops, like a remote scorer error.
      throw ScoringError(e.what());
    } catch (const py::cast_error& e) {
      throw ScoringError(std::string("scorer returned a non-number: ") + e.what());
    }
  }
  std::string name() const override { return "python"; }

 private:
  py::function fn_;
};

PmiRanking read_ranking(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read ranking " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return ranking_from_json(os.str());
}

ExperimentConfig make_config(const std::string& setting, std::uint64_t seed, std::size_t cycles,
                             std::size_t runs, std::size_t probes, std::size_t workers,
                             const std::vector<std::string>& rankings, double max_drop_rate) {
  ExperimentConfig cfg;
  cfg.setting = parse_setting(setting);
  cfg.master_seed = seed;
  cfg.cycles_per_run = cycles;
  cfg.runs = runs;
  cfg.probes_per_cycle = probes;
  cfg.workers = workers;
  cfg.max_drop_rate = max_drop_rate;
  for (const auto& path : rankings) {
    auto r = read_ranking(path);
    cfg.rankings[r.pattern] = std::move(r);
  }
  return cfg;
}

std::string result_json(const ExperimentResult& result) {
  json doc = report_to_json(result.table, classify(result.table));
  doc["dropped"] = result.drops.total;
  doc["failed"] = result.failed;
  return doc.dump();
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Abstract sameness relation probing core";
  m.attr("__version__") = kToolVersion;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ScoringError>(m, "ScoringError");
  py::register_exception<TransportError>(m, "TransportError", PyExc_ConnectionError);
  py::register_exception<ProtocolError>(m, "ProtocolError");

  m.def("surprisal_bits", &surprisal_bits, py::arg("log2_p_t2"), py::arg("log2_p_t3"));
  m.def("cycle_seed",
        [](std::uint64_t master, std::size_t run, std::size_t cycle, const std::string& pattern) {
          return cycle_seed(master, run, cycle, parse_pattern(pattern));
        },
        py::arg("master_seed"), py::arg("run"), py::arg("cycle"), py::arg("prime_pattern"));

  m.def("priming_sequence",
        [](std::uint64_t seed, std::size_t vocab_size, const std::string& pattern) {
          ExperimentConfig cfg;
          ExperimentPlan plan(cfg, make_synthetic_vocabulary(vocab_size));
          UniformScorer u(vocab_size);
          auto cyc = run_cycle(plan, parse_pattern(pattern), seed, u);
          return cyc.rendered;
        },
        py::arg("seed"), py::arg("vocab_size"), py::arg("prime_pattern"),
        "Token ids of one rendered priming sequence over a synthetic vocabulary.");

  m.def("run_experiment_json",
        [](const std::string& scorer, const std::string& setting, std::uint64_t seed,
           std::size_t cycles, std::size_t runs, std::size_t probes, std::size_t workers,
           const std::vector<std::string>& rankings, double max_drop_rate) {
          auto cfg = make_config(setting, seed, cycles, runs, probes, workers, rankings,
                                 max_drop_rate);
          Backend backend = open_backend(scorer, {}, cfg.separator);
          ExperimentPlan plan(cfg, backend.vocabulary);
          ExperimentResult result;
          {
            py::gil_scoped_release release;
            result = run_experiment(plan, backend.factory);
          }
          return result_json(result);
        },
        py::arg("scorer"), py::arg("setting"), py::arg("seed"), py::arg("cycles"),
        py::arg("runs"), py::arg("probes"), py::arg("workers"), py::arg("rankings"),
        py::arg("max_drop_rate"));

  m.def("run_with_callable_json",
        [](py::function fn, const std::vector<std::string>& vocabulary,
           const std::string& separator, const std::string& setting, std::uint64_t seed,
           std::size_t cycles, std::size_t runs, std::size_t probes,
           const std::vector<std::string>& rankings, double max_drop_rate) {
          std::vector<Token> tokens;
          for (std::size_t i = 0; i < vocabulary.size(); ++i) {
            tokens.push_back({vocabulary[i], static_cast<TokenId>(i)});
          }
          auto cfg = make_config(setting, seed, cycles, runs, probes, 1, rankings, max_drop_rate);
          cfg.separator = separator;
          ExperimentPlan plan(cfg, Vocabulary(std::move(tokens)));
          PyScorer scorer(std::move(fn));
          ExperimentResult result;
          {
            py::gil_scoped_release release;
            result = run_experiment(plan, scorer);
          }
          return result_json(result);
        },
        py::arg("scorer"), py::arg("vocabulary"), py::arg("separator"), py::arg("setting"),
        py::arg("seed"), py::arg("cycles"), py::arg("runs"), py::arg("probes"),
        py::arg("rankings"), py::arg("max_drop_rate"));

  m.def("mine_pmi_json",
        [](const std::vector<std::vector<TokenId>>& documents, const std::vector<std::string>& patterns,
           std::uint64_t min_count, std::size_t top, std::size_t workers,
           const std::vector<TokenId>& exclude, const std::string& corpus_id) {
          std::unordered_set<TokenId> excluded(exclude.begin(), exclude.end());
          CorpusStats stats;
          {
            py::gil_scoped_release release;
            stats = scan_corpus_sharded(documents, std::max<std::size_t>(1, workers), excluded);
          }
          std::vector<std::string> out;
          for (const auto& p : patterns) {
            out.push_back(ranking_to_json(
                rank_top(stats, parse_pattern(p), min_count, top, nullptr, corpus_id)));
          }
          return out;
        },
        py::arg("documents"), py::arg("patterns"), py::arg("min_count"), py::arg("top"),
        py::arg("workers"), py::arg("exclude"), py::arg("corpus_id"));

  m.def("pmi",
        [](const std::vector<std::vector<TokenId>>& documents, std::array<TokenId, 3> key) {
          auto stats = scan_corpus(documents);
          return compute_pmi({key[0], key[1], key[2]}, stats);
        },
        py::arg("documents"), py::arg("trigram"));

  m.def("classify_json",
        [](const std::string& report) {
          auto sec = parse_report(report);
          return report_to_json(sec.table, sec.verdict).dump();
        },
        py::arg("report"));

  m.def("render_json",
        [](const std::vector<std::string>& reports, const std::string& format) {
          std::vector<ReportSection> sections;
          for (const auto& r : reports) sections.push_back(parse_report(r));
          switch (parse_report_format(format)) {
            case ReportFormat::Text: return render_text(sections);
            case ReportFormat::Csv: return render_csv(sections);
            case ReportFormat::Json: return render_json(sections);
          }
          return std::string();
        },
        py::arg("reports"), py::arg("format"));
}
