#pragma once

// Corpus ingestion, tokenization and the inverted index behind BM25.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "autorag/kernels.hpp"

namespace autorag::corpus {

using TokenId = std::uint32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kSep = 4;
inline constexpr TokenId kNumSpecial = 5;

inline constexpr int kIndexFormatVersion = 1;

/// Lowercases and splits on whitespace and ASCII punctuation. Punctuation
/// characters are kept as single-character tokens.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
 public:
  Vocabulary();

  /// Corpus tokens ranked by (frequency desc, token asc), truncated so that
  /// the total size including specials does not exceed `cap`.
  static Vocabulary build(const std::vector<std::vector<std::string>>& docs, std::size_t cap);
  static Vocabulary from_tokens(const std::vector<std::string>& id_to_token);

  TokenId id(std::string_view token) const;
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const { return id_to_token_.size(); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }
  static bool is_special(TokenId id) { return id < kNumSpecial; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab);

/// Tokens joined by single spaces; re-tokenizing the result reproduces the
/// token sequence for any in-vocabulary input.
std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab);

struct RawDocument {
  std::string id;
  std::string text;
  std::string title;
};

struct Document {
  std::string id;
  std::string text;
  std::string title;
  std::vector<TokenId> tokens;
};

struct TokenizerConfig {
  std::size_t vocab_cap = 8192;
};

/// Immutable after construction; safe for concurrent reads.
class CorpusIndex {
 public:
  CorpusIndex() = default;

  static CorpusIndex build(std::vector<RawDocument> docs, const TokenizerConfig& config);

  const std::vector<Document>& documents() const { return documents_; }
  const Vocabulary& vocab() const { return vocab_; }
  const std::vector<kernels::Posting>& postings(TokenId term) const;
  std::span<const double> doc_lengths() const { return doc_lengths_; }
  double avg_doc_length() const { return avg_doc_length_; }
  std::size_t size() const { return documents_.size(); }
  std::size_t document_frequency(TokenId term) const { return postings(term).size(); }
  std::uint32_t term_frequency(TokenId term, std::uint32_t doc) const;

  /// Dense position of a document id, or nullopt.
  std::optional<std::uint32_t> find(std::string_view doc_id) const;
  const Document& document(std::uint32_t pos) const { return documents_.at(pos); }

  nlohmann::json to_json() const;
  static CorpusIndex from_json(const nlohmann::json& j);
  /// Serialized form; byte-identical for identical inputs.
  std::string serialize() const;

 private:
  std::vector<Document> documents_;
  Vocabulary vocab_;
  std::vector<std::vector<kernels::Posting>> postings_;
  std::vector<double> doc_lengths_;
  double avg_doc_length_ = 0.0;
  std::unordered_map<std::string, std::uint32_t> by_id_;
};

/// Parses JSON-lines records {"id", "text", optional "title"}. Blank lines
/// are skipped. Errors name the 1-based line number or the duplicate id.
std::vector<RawDocument> parse_corpus_jsonl(std::string_view content);

CorpusIndex ingest_corpus(const std::string& path, const TokenizerConfig& config);

}  // namespace autorag::corpus
