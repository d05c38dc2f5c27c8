#include "asrprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "asrprobe/errors.hpp"
#include "asrprobe/rng.hpp"

namespace asrprobe {

using json = nlohmann::json;

ReportFormat parse_report_format(std::string_view text) {
  if (text == "text") return ReportFormat::Text;
  if (text == "csv") return ReportFormat::Csv;
  if (text == "json") return ReportFormat::Json;
  throw ConfigError("unknown report format '" + std::string(text) + "'");
}

namespace {

std::string fixed4(double v) {
  if (std::isnan(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string full(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool is_min(const RowVerdict& row, Pattern probe) {
  return std::find(row.minima.begin(), row.minima.end(), probe) != row.minima.end();
}

const RowVerdict* find_row(const Verdict& v, Pattern prime) {
  for (const auto& r : v.rows) {
    if (r.prime == prime) return &r;
  }
  return nullptr;
}

std::string pad_left(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}

std::string pad_right(const std::string& s, std::size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

std::string verdict_line(const Verdict& v) {
  std::string out = "  verdict: human-consistent ";
  out += v.human_consistent ? "yes" : "no";
  out += "; row minimum";
  for (const auto& r : v.rows) {
    out += " " + std::string(to_string(r.prime)) + "->";
    out += r.argmin ? std::string(to_string(*r.argmin)) : "tie";
  }
  if (!v.rows.empty() && v.rows.front().abc_is_max) {
    out += "; ABC max";
    for (const auto& r : v.rows) out += r.abc_is_max.value_or(false) ? " yes" : " no";
  }
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

std::string render_text(const std::vector<ReportSection>& sections) {
  std::ostringstream os;
  std::size_t name_w = 0;
  for (const auto& s : sections) name_w = std::max(name_w, s.table.scorer.size());

  std::vector<Pattern> prev_columns;
  std::string prev_setting;
  for (const auto& sec : sections) {
    const ResultsTable& t = sec.table;
    const auto columns = t.probe_columns();

    std::vector<std::string> headers;
    for (Pattern p : columns) headers.push_back("S(" + std::string(to_string(p)) + "|primes)");
    std::vector<std::vector<std::string>> grid;
    for (Pattern prime : t.prime_rows()) {
      const RowVerdict* rv = find_row(sec.verdict, prime);
      std::vector<std::string> cells;
      for (Pattern probe : columns) {
        std::string c = fixed4(t.at(prime, probe).mean);
        if (probe == prime) c = "[" + c + "]";
        c += (rv && is_min(*rv, probe)) ? "*" : " ";
        cells.push_back(std::move(c));
      }
      grid.push_back(std::move(cells));
    }
    std::vector<std::size_t> widths;
    for (std::size_t j = 0; j < columns.size(); ++j) {
      std::size_t w = headers[j].size() + 1;
      for (const auto& row : grid) w = std::max(w, row[j].size());
      widths.push_back(w);
    }

    const std::string setting(to_string(t.setting));
    if (columns != prev_columns || setting != prev_setting) {
      if (!prev_setting.empty()) os << '\n';
      os << "Setting: " << setting << " primes-probes, mean surprisal in bits"
         << " ([x] consistent condition, * row minimum)\n";
      os << pad_right("", name_w) << "  " << pad_right("", 10);
      for (std::size_t j = 0; j < columns.size(); ++j) {
        os << "  " << pad_left(headers[j] + " ", widths[j]);
      }
      os << '\n';
      prev_columns = columns;
      prev_setting = setting;
    }

    const auto rows = t.prime_rows();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      os << pad_right(i == 0 ? t.scorer : "", name_w) << "  "
         << pad_right(std::string(to_string(rows[i])) + " primes", 10);
      for (std::size_t j = 0; j < columns.size(); ++j) {
        os << "  " << pad_left(grid[i][j], widths[j]);
      }
      os << '\n';
    }
    std::size_t n_min = std::numeric_limits<std::size_t>::max(), n_max = 0;
    for (const auto& [key, cell] : t.cells) {
      n_min = std::min(n_min, cell.n);
      n_max = std::max(n_max, cell.n);
    }
    os << verdict_line(sec.verdict) << "; n=" << n_min;
    if (n_max != n_min) os << ".." << n_max;
    os << " per cell\n";
  }
  return os.str();
}

std::string render_csv(const std::vector<ReportSection>& sections) {
  std::ostringstream os;
  os << "setting,scorer,prime,probe,mean,std,n,consistent,row_min\n";
  for (const auto& sec : sections) {
    for (const auto& [key, cell] : sec.table.cells) {
      const RowVerdict* rv = find_row(sec.verdict, key.prime);
      os << to_string(sec.table.setting) << ',' << csv_field(sec.table.scorer) << ','
         << to_string(key.prime) << ',' << to_string(key.probe) << ',' << full(cell.mean) << ','
         << full(cell.std) << ',' << cell.n << ',' << (key.prime == key.probe ? 1 : 0) << ','
         << (rv && is_min(*rv, key.probe) ? 1 : 0) << '\n';
    }
  }
  return os.str();
}

namespace {

json number_or_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

double number_from(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

json report_to_json(const ResultsTable& table, const Verdict& verdict) {
  json cells = json::array();
  for (const auto& [key, cell] : table.cells) {
    cells.push_back({{"prime", std::string(to_string(key.prime))},
                     {"probe", std::string(to_string(key.probe))},
                     {"mean", number_or_null(cell.mean)},
                     {"std", number_or_null(cell.std)},
                     {"n", cell.n}});
  }
  json rows = json::array();
  for (const auto& r : verdict.rows) {
    json minima = json::array();
    for (Pattern p : r.minima) minima.push_back(std::string(to_string(p)));
    rows.push_back({{"prime", std::string(to_string(r.prime))},
                    {"argmin", r.argmin ? json(std::string(to_string(*r.argmin))) : json()},
                    {"minima", minima},
                    {"diagonal_min", r.diagonal_min},
                    {"abc_is_max", r.abc_is_max ? json(*r.abc_is_max) : json()}});
  }
  return {{"schema", kReportSchema},
          {"setting", std::string(to_string(table.setting))},
          {"scorer", table.scorer},
          {"master_seed", table.master_seed},
          {"expected_n", table.expected_n},
          {"cells", cells},
          {"verdict", {{"human_consistent", verdict.human_consistent}, {"rows", rows}}}};
}

ReportSection report_from_json(const json& doc) {
  if (!doc.is_object()) throw FormatError("report must be a JSON object");
  const std::string schema = doc.value("schema", std::string("<none>"));
  if (schema != kReportSchema) {
    throw FormatError("report schema mismatch: expected " + std::string(kReportSchema) +
                      ", found " + schema);
  }
  try {
    ReportSection sec;
    sec.table.setting = parse_setting(doc.at("setting").get<std::string>());
    sec.table.scorer = doc.at("scorer").get<std::string>();
    sec.table.master_seed = doc.at("master_seed").get<std::uint64_t>();
    sec.table.expected_n = doc.at("expected_n").get<std::size_t>();
    for (const auto& c : doc.at("cells")) {
      ConditionKey key{parse_pattern(c.at("prime").get<std::string>()),
                       parse_pattern(c.at("probe").get<std::string>())};
      sec.table.cells[key] =
          CellStats{number_from(c.at("mean")), number_from(c.at("std")), c.at("n").get<std::size_t>()};
    }
    sec.verdict = classify(sec.table);
    return sec;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

ReportSection parse_report(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("report is not valid JSON: ") + e.what());
  }
  return report_from_json(doc);
}

std::string render_json(const std::vector<ReportSection>& sections) {
  if (sections.size() == 1) {
    return report_to_json(sections[0].table, sections[0].verdict).dump(2) + "\n";
  }
  json arr = json::array();
  for (const auto& s : sections) arr.push_back(report_to_json(s.table, s.verdict));
  return arr.dump(2) + "\n";
}

std::string emit(const ResultsTable& table, const Verdict& verdict, ReportFormat format) {
  const std::vector<ReportSection> one{{table, verdict}};
  switch (format) {
    case ReportFormat::Text: return render_text(one);
    case ReportFormat::Csv: return render_csv(one);
    case ReportFormat::Json: return render_json(one);
  }
  return {};
}

json config_to_json(const ExperimentConfig& config) {
  json rankings = json::object();
  for (const auto& [p, r] : config.rankings) {
    rankings[std::string(to_string(p))] = {{"corpus_id", r.corpus_id},
                                           {"entries", r.entries.size()},
                                           {"min_count", r.min_count}};
  }
  return {{"setting", std::string(to_string(config.setting))},
          {"probes_per_cycle", config.probes_per_cycle},
          {"cycles_per_run", config.cycles_per_run},
          {"runs", config.runs},
          {"master_seed", config.master_seed},
          {"separator", config.separator},
          {"max_drop_rate", config.max_drop_rate},
          {"workers", config.workers},
          {"measurements_per_condition", config.measurements_per_condition()},
          {"rankings", rankings}};
}

std::string manifest_to_json(const RunManifest& m) {
  json seeds = json::array();
  for (const auto& s : m.seeds) {
    seeds.push_back({std::string(to_string(s.prime)), s.run, s.cycle, s.seed});
  }
  json by_cell = json::object();
  for (const auto& [key, n] : m.drops.by_cell) {
    by_cell[std::string(to_string(key.probe)) + "|" + std::string(to_string(key.prime))] = n;
  }
  json doc{{"schema", kManifestSchema},
           {"tool_version", kToolVersion},
           {"rng", kRngName},
           {"seed_derivation",
            "cycle seed = derive_seed(master, [0x6379636c65, run, cycle, prime index]); "
            "seen split = derive_seed(master, [0x73706c6974, pattern index]); "
            "derive_seed folds h = mix64((h + 0x9e3779b97f4a7c15) ^ field)"},
           {"config", m.config},
           {"scorer", m.scorer},
           {"ranking_files", m.ranking_files},
           {"cycle_seeds", {{"columns", {"prime", "run", "cycle", "seed"}}, {"rows", seeds}}},
           {"drops",
            {{"total", m.drops.total},
             {"attempted", m.drops.attempted},
             {"rate", m.drops.rate()},
             {"by_cell", by_cell},
             {"samples", m.drops.samples}}},
           {"status", m.failed ? "failed" : "ok"},
           {"failure", m.failure},
           {"timing", m.timing}};
  return doc.dump(2) + "\n";
}

std::string stimulus_line(const CycleResult& cycle, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < cycle.rendered.size(); ++i) {
    if (i) out += ' ';
    out += vocab.at(cycle.rendered[i]).surface;
  }
  return out;
}

json stimulus_record(const CycleResult& cycle) {
  json trigrams = json::array();
  for (const TriGram& g : cycle.sequence.trigrams) trigrams.push_back(g.ids());
  json probes = json::array();
  for (const Measurement& m : cycle.measurements) {
    probes.push_back({{"pattern", std::string(to_string(m.probe.pattern))}, {"ids", m.probe.ids()}});
  }
  for (const DroppedProbe& d : cycle.dropped) {
    probes.push_back({{"pattern", std::string(to_string(d.probe.pattern))},
                      {"ids", d.probe.ids()},
                      {"dropped", d.reason}});
  }
  return {{"prime", std::string(to_string(cycle.prime_pattern))},
          {"run", cycle.run},
          {"cycle", cycle.cycle},
          {"seed", cycle.seed},
          {"prime_tokens", cycle.prime_tokens},
          {"probe_tokens", cycle.probe_tokens},
          {"trigrams", trigrams},
          {"rendered", cycle.rendered},
          {"probes", probes}};
}

}  // namespace asrprobe
