#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "asrprobe/experiment.hpp"

namespace asrprobe {

inline constexpr const char* kReportSchema = "asrprobe.report/1";
inline constexpr const char* kManifestSchema = "asrprobe.manifest/1";
inline constexpr const char* kToolVersion = "0.3.0";

enum class ReportFormat { Text, Csv, Json };

ReportFormat parse_report_format(std::string_view text);

struct ReportSection {
  ResultsTable table;
  Verdict verdict;
};

/// Aligned table with one block of prime rows per scorer,
/// columns S(probe|primes). Consistent cells are bracketed, row minima starred.
std::string render_text(const std::vector<ReportSection>& sections);
std::string render_csv(const std::vector<ReportSection>& sections);
/// A single report document for one section, an array for several.
std::string render_json(const std::vector<ReportSection>& sections);

std::string emit(const ResultsTable& table, const Verdict& verdict, ReportFormat format);

nlohmann::json report_to_json(const ResultsTable& table, const Verdict& verdict);
/// Throws FormatError on schema mismatch. The verdict is recomputed from the
/// parsed table.
ReportSection report_from_json(const nlohmann::json& doc);
ReportSection parse_report(const std::string& text);

/// Everything needed to rerun an experiment and check the result.
struct RunManifest {
  nlohmann::json config;
  nlohmann::json scorer;
  std::vector<CycleSeed> seeds;
  DropReport drops;
  bool failed = false;
  std::string failure;
  /// Null unless timing was requested; wall-clock values break byte identity.
  nlohmann::json timing;
  std::vector<std::string> ranking_files;
};

nlohmann::json config_to_json(const ExperimentConfig& config);

/// Rendered priming sequence as space-separated surfaces.
std::string stimulus_line(const CycleResult& cycle, const Vocabulary& vocab);
/// Token ids, pattern labels and seed of one cycle's stimuli.
nlohmann::json stimulus_record(const CycleResult& cycle);
std::string manifest_to_json(const RunManifest& manifest);

}  // namespace asrprobe
