#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "asrprobe/corpus.hpp"
#include "asrprobe/errors.hpp"

using namespace asrprobe;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("asrprobe_corpus_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<std::vector<TokenId>> read_all(const fs::path& p, CorpusFormat f,
                                           const Tokenizer& tok = {}) {
  std::vector<std::vector<TokenId>> out;
  for_each_document(p, f, [&](std::span<const TokenId> d) { out.emplace_back(d.begin(), d.end()); },
                    tok);
  return out;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("text and binary round trips") {
  TempDir tmp;
  const std::vector<std::vector<TokenId>> docs{{1, 2, 3}, {}, {4000000000u, 7}, {9}};
  write_text_corpus(tmp.path / "c.txt", docs);
  write_binary_corpus(tmp.path / "c.bin", docs);
  CHECK(read_all(tmp.path / "c.bin", CorpusFormat::Auto) == docs);
  auto text = read_all(tmp.path / "c.txt", CorpusFormat::Auto);
  // Blank lines carry no windows; either reading is acceptable as long as the
  // non-empty documents survive in order.
  std::erase_if(text, [](const auto& d) { return d.empty(); });
  CHECK(text == std::vector<std::vector<TokenId>>{{1, 2, 3}, {4000000000u, 7}, {9}});
}

TEST_CASE("malformed inputs name their location") {
  TempDir tmp;
  {
    std::ofstream(tmp.path / "bad.txt") << "1 2 3\n4 x 5\n";
  }
  try {
    read_all(tmp.path / "bad.txt", CorpusFormat::Text);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  {
    std::ofstream out(tmp.path / "bad.bin", std::ios::binary);
    const std::uint32_t n = 5, id = 1;
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&id), 4);
  }
  CHECK_THROWS_AS(read_all(tmp.path / "bad.bin", CorpusFormat::Binary), FormatError);
  CHECK_THROWS_AS(read_all(tmp.path / "missing.txt", CorpusFormat::Text), FormatError);
}

TEST_CASE("raw format delegates to the tokenizer") {
  TempDir tmp;
  {
    std::ofstream(tmp.path / "raw.txt") << "ab\nabc\n";
  }
  auto docs = read_all(tmp.path / "raw.txt", CorpusFormat::Raw, [](std::string_view s) {
    std::vector<TokenId> ids;
    for (char c : s) ids.push_back(static_cast<TokenId>(c));
    return ids;
  });
  CHECK(docs == std::vector<std::vector<TokenId>>{{'a', 'b'}, {'a', 'b', 'c'}});
  CHECK_THROWS_AS(read_all(tmp.path / "raw.txt", CorpusFormat::Raw), ConfigError);
  CHECK(parse_corpus_format("bin") == CorpusFormat::Binary);
}

}
