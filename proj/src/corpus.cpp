#include "asrprobe/corpus.hpp"

#include <charconv>
#include <fstream>

#include "asrprobe/errors.hpp"

namespace asrprobe {

CorpusFormat parse_corpus_format(std::string_view text) {
  if (text == "auto") return CorpusFormat::Auto;
  if (text == "text") return CorpusFormat::Text;
  if (text == "bin" || text == "binary") return CorpusFormat::Binary;
  if (text == "raw") return CorpusFormat::Raw;
  throw ConfigError("unknown corpus format '" + std::string(text) + "'");
}

namespace {

void read_text(std::istream& in, const std::string& name, const DocumentSink& sink) {
  std::string line;
  std::vector<TokenId> doc;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    doc.clear();
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p == end) break;
      TokenId id = 0;
      auto [next, ec] = std::from_chars(p, end, id);
      if (ec != std::errc() || (next < end && *next != ' ' && *next != '\t' && *next != '\r')) {
        throw FormatError(name + ":" + std::to_string(lineno) + ": expected a token id");
      }
      doc.push_back(id);
      p = next;
    }
    sink(doc);
  }
}

std::uint32_t load_le32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void read_binary(std::istream& in, const std::string& name, const DocumentSink& sink) {
  std::vector<TokenId> doc;
  std::vector<unsigned char> buf;
  std::uint64_t offset = 0;
  unsigned char head[4];
  for (;;) {
    in.read(reinterpret_cast<char*>(head), 4);
    if (in.gcount() == 0) break;
    if (in.gcount() != 4) {
      throw FormatError(name + ": truncated length prefix at byte " + std::to_string(offset));
    }
    const std::uint32_t len = load_le32(head);
    offset += 4;
    buf.resize(static_cast<std::size_t>(len) * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
      throw FormatError(name + ": truncated document at byte " + std::to_string(offset));
    }
    offset += buf.size();
    doc.resize(len);
    for (std::uint32_t i = 0; i < len; ++i) doc[i] = load_le32(&buf[4 * i]);
    sink(doc);
  }
}

void read_raw(std::istream& in, const DocumentSink& sink, const Tokenizer& tokenizer) {
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto ids = line.empty() ? std::vector<TokenId>{} : tokenizer(line);
    sink(ids);
  }
}

void store_le32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

void for_each_document(const std::filesystem::path& path, CorpusFormat format,
                       const DocumentSink& sink, const Tokenizer& tokenizer) {
  if (format == CorpusFormat::Auto) {
    format = path.extension() == ".bin" ? CorpusFormat::Binary : CorpusFormat::Text;
  }
  std::ifstream in(path, format == CorpusFormat::Binary ? std::ios::binary : std::ios::in);
  if (!in) throw FormatError("cannot open corpus " + path.string());
  switch (format) {
    case CorpusFormat::Text:
      read_text(in, path.string(), sink);
      break;
    case CorpusFormat::Binary:
      read_binary(in, path.string(), sink);
      break;
    case CorpusFormat::Raw:
      if (!tokenizer) throw ConfigError("raw corpus input needs a tokenizing scorer");
      read_raw(in, sink, tokenizer);
      break;
    case CorpusFormat::Auto:
      break;
  }
}

void write_text_corpus(const std::filesystem::path& path,
                       const std::vector<std::vector<TokenId>>& documents) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& doc : documents) {
    for (std::size_t i = 0; i < doc.size(); ++i) out << (i ? " " : "") << doc[i];
    out << '\n';
  }
}

void write_binary_corpus(const std::filesystem::path& path,
                         const std::vector<std::vector<TokenId>>& documents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const auto& doc : documents) {
    store_le32(out, static_cast<std::uint32_t>(doc.size()));
    for (TokenId id : doc) store_le32(out, id);
  }
}

}  // namespace asrprobe
