#include <doctest.h>

#include <cmath>
#include <sstream>

#include "asrprobe/errors.hpp"
#include "asrprobe/report.hpp"
#include "support/fixtures.hpp"

using namespace asrprobe;
using asrprobe::testing::table_from;

namespace {

ReportSection section(const std::vector<std::vector<double>>& rows, std::string scorer,
                      Setting s = Setting::RandomRandom) {
  auto t = table_from(rows, s, std::move(scorer));
  return {t, classify(t)};
}

ReportSection bert() {
  return section({{73.24, 72.13, 70.27, 74.31},
                  {71.38, 70.16, 68.41, 72.08},
                  {72.47, 71.09, 69.41, 73.18}},
                 "bert");
}

std::size_t count_lines_with(const std::string& text, const std::string& needle) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.find(needle) != std::string::npos;
  return n;
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("text layout: prime rows, consistent brackets, row minima") {
  auto sec = bert();
  const auto text = emit(sec.table, sec.verdict, ReportFormat::Text);
  CHECK(count_lines_with(text, " primes ") == 3);
  CHECK(text.find("Setting: random-random") != std::string::npos);
  CHECK(text.find("S(ABC|primes)") != std::string::npos);
  CHECK(text.find("[69.4100]*") != std::string::npos);  // ABB row, ABB column
  CHECK(text.find("70.2700*") != std::string::npos);    // AAB row minimum off the diagonal
  CHECK(text.find("[73.2400]") != std::string::npos);
}

TEST_CASE("text: several scorers stack under one header, new setting gets a new one") {
  std::vector<ReportSection> secs{bert(), bert(),
                                  section({{44.67, 50.87, 47.00},
                                           {43.93, 50.05, 46.01},
                                           {44.74, 51.01, 47.02}},
                                          "bert", Setting::RandomSeen)};
  secs[1].table.scorer = "gpt2";
  const auto text = render_text(secs);
  CHECK(count_lines_with(text, "Setting:") == 2);
  CHECK(count_lines_with(text, " primes ") == 9);
  CHECK(text.find("bert") < text.find("gpt2"));
}

TEST_CASE("csv has a header and one row per cell") {
  auto sec = bert();
  const auto csv = emit(sec.table, sec.verdict, ReportFormat::Csv);
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("mean") != std::string::npos);
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) rows += !line.empty();
  CHECK(rows == 12);
}

TEST_CASE("json round trip recomputes the verdict") {
  auto sec = bert();
  const auto text = emit(sec.table, sec.verdict, ReportFormat::Json);
  auto back = parse_report(text);
  CHECK(back.table == sec.table);
  CHECK(back.verdict.human_consistent == sec.verdict.human_consistent);
  CHECK(report_to_json(back.table, back.verdict).dump() == report_to_json(sec.table, sec.verdict).dump());

  auto doc = nlohmann::json::parse(text);
  doc["schema"] = "asrprobe.report/9";
  CHECK_THROWS_AS(report_from_json(doc), FormatError);
  CHECK_THROWS_AS(parse_report("not json"), FormatError);
}

TEST_CASE("empty cells serialize as null and come back as NaN") {
  auto t = bert().table;
  t.cells[{Pattern::AAB, Pattern::ABC}] = {std::nan(""), std::nan(""), 0};
  auto v = classify(t);
  auto j = report_to_json(t, v);
  auto back = report_from_json(j);
  CHECK(std::isnan(back.table.at(Pattern::AAB, Pattern::ABC).mean));
  CHECK(back.table.at(Pattern::AAB, Pattern::ABC).n == 0);
  CHECK(j.dump().find("null") != std::string::npos);
}

TEST_CASE("format names") {
  CHECK(parse_report_format("csv") == ReportFormat::Csv);
  CHECK(parse_report_format("json") == ReportFormat::Json);
  CHECK(parse_report_format("text") == ReportFormat::Text);
  CHECK_THROWS_AS(parse_report_format("xml"), ConfigError);
}

}
