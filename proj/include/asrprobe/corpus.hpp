#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "asrprobe/stimulus.hpp"

namespace asrprobe {

// Text: one document per line, token ids separated by whitespace.
// Binary: repeated records of a little-endian uint32 length followed by that
// many little-endian uint32 ids.
// Raw: one document per line of plain text, tokenized by a callback.
enum class CorpusFormat { Auto, Text, Binary, Raw };

CorpusFormat parse_corpus_format(std::string_view text);

using DocumentSink = std::function<void(std::span<const TokenId>)>;
using Tokenizer = std::function<std::vector<TokenId>(std::string_view)>;

/// Auto picks Binary for ".bin", Text otherwise. Raw requires `tokenizer`.
/// Throws FormatError with the offending line or byte offset.
void for_each_document(const std::filesystem::path& path, CorpusFormat format,
                       const DocumentSink& sink, const Tokenizer& tokenizer = {});

void write_text_corpus(const std::filesystem::path& path,
                       const std::vector<std::vector<TokenId>>& documents);
void write_binary_corpus(const std::filesystem::path& path,
                         const std::vector<std::vector<TokenId>>& documents);

}  // namespace asrprobe
