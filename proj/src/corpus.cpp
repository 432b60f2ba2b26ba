#include "autorag/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "autorag/error.hpp"
#include "autorag/util.hpp"

namespace autorag::corpus {

namespace {

const std::vector<std::string> kSpecialTokens = {"<pad>", "<bos>", "<eos>", "<unk>", "<sep>"};

bool is_punct(unsigned char c) { return c < 128 && std::ispunct(c); }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (const char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else if (is_punct(c)) {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 128 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() {
  for (const auto& s : kSpecialTokens) {
    token_to_id_.emplace(s, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(s);
  }
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& docs, std::size_t cap) {
  if (cap < kNumSpecial) fail_usage("vocabulary cap must be at least " + std::to_string(kNumSpecial));
  std::map<std::string, std::size_t> counts;
  for (const auto& d : docs)
    for (const auto& t : d) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, n] : ranked) {
    if (v.size() >= cap) break;
    if (v.token_to_id_.count(tok)) continue;
    v.token_to_id_.emplace(tok, static_cast<TokenId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& id_to_token) {
  if (id_to_token.size() < kNumSpecial ||
      !std::equal(kSpecialTokens.begin(), kSpecialTokens.end(), id_to_token.begin()))
    fail_data("vocabulary: missing or reordered special tokens");
  Vocabulary v;
  for (std::size_t i = kNumSpecial; i < id_to_token.size(); ++i) {
    if (!v.token_to_id_.emplace(id_to_token[i], static_cast<TokenId>(i)).second)
      fail_data("vocabulary: duplicate token '" + id_to_token[i] + "'");
    v.id_to_token_.push_back(id_to_token[i]);
  }
  return v;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const { return id_to_token_.at(id); }

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) > 0;
}

std::vector<TokenId> tokenize(std::string_view text, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

CorpusIndex CorpusIndex::build(std::vector<RawDocument> docs, const TokenizerConfig& config) {
  CorpusIndex idx;
  std::vector<std::vector<std::string>> words;
  words.reserve(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!idx.by_id_.emplace(docs[i].id, static_cast<std::uint32_t>(i)).second)
      fail_data("duplicate document id '" + docs[i].id + "'");
    words.push_back(split_words(docs[i].text));
  }
  idx.vocab_ = Vocabulary::build(words, config.vocab_cap);
  idx.postings_.assign(idx.vocab_.size(), {});
  double total = 0.0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    Document d{std::move(docs[i].id), std::move(docs[i].text), std::move(docs[i].title), {}};
    for (const auto& w : words[i]) d.tokens.push_back(idx.vocab_.id(w));
    std::map<TokenId, std::uint32_t> tf;
    for (TokenId t : d.tokens) ++tf[t];
    for (const auto& [t, n] : tf)
      idx.postings_[t].push_back({static_cast<std::uint32_t>(i), n});
    idx.doc_lengths_.push_back(static_cast<double>(d.tokens.size()));
    total += static_cast<double>(d.tokens.size());
    idx.documents_.push_back(std::move(d));
  }
  idx.avg_doc_length_ = idx.documents_.empty() ? 0.0 : total / static_cast<double>(idx.documents_.size());
  return idx;
}

const std::vector<kernels::Posting>& CorpusIndex::postings(TokenId term) const {
  static const std::vector<kernels::Posting> kEmpty;
  return term < postings_.size() ? postings_[term] : kEmpty;
}

std::uint32_t CorpusIndex::term_frequency(TokenId term, std::uint32_t doc) const {
  const auto& p = postings(term);
  auto it = std::lower_bound(p.begin(), p.end(), doc,
                             [](const kernels::Posting& a, std::uint32_t d) { return a.doc < d; });
  return (it != p.end() && it->doc == doc) ? it->tf : 0;
}

std::optional<std::uint32_t> CorpusIndex::find(std::string_view doc_id) const {
  auto it = by_id_.find(std::string(doc_id));
  if (it == by_id_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json CorpusIndex::to_json() const {
  nlohmann::json j;
  j["format_version"] = kIndexFormatVersion;
  j["vocabulary"] = vocab_.tokens();
  auto docs = nlohmann::json::array();
  for (const auto& d : documents_) {
    nlohmann::json jd{{"id", d.id}, {"text", d.text}, {"tokens", d.tokens}};
    if (!d.title.empty()) jd["title"] = d.title;
    docs.push_back(std::move(jd));
  }
  j["documents"] = std::move(docs);
  auto post = nlohmann::json::array();
  for (const auto& pl : postings_) {
    auto jp = nlohmann::json::array();
    for (const auto& p : pl) jp.push_back({p.doc, p.tf});
    post.push_back(std::move(jp));
  }
  j["postings"] = std::move(post);
  j["avg_doc_length"] = avg_doc_length_;
  return j;
}

CorpusIndex CorpusIndex::from_json(const nlohmann::json& j) {
  if (!j.contains("format_version") || j["format_version"] != kIndexFormatVersion)
    fail_data("index format version mismatch: expected " + std::to_string(kIndexFormatVersion) +
              ", found " + (j.contains("format_version") ? j["format_version"].dump() : "none"));
  CorpusIndex idx;
  idx.vocab_ = Vocabulary::from_tokens(j.at("vocabulary").get<std::vector<std::string>>());
  double total = 0.0;
  for (const auto& jd : j.at("documents")) {
    Document d{jd.at("id").get<std::string>(), jd.at("text").get<std::string>(),
               jd.value("title", std::string{}), jd.at("tokens").get<std::vector<TokenId>>()};
    for (TokenId t : d.tokens)
      if (t >= idx.vocab_.size()) fail_data("index: token id out of range in '" + d.id + "'");
    const auto pos = static_cast<std::uint32_t>(idx.documents_.size());
    if (!idx.by_id_.emplace(d.id, pos).second) fail_data("duplicate document id '" + d.id + "'");
    idx.doc_lengths_.push_back(static_cast<double>(d.tokens.size()));
    total += static_cast<double>(d.tokens.size());
    idx.documents_.push_back(std::move(d));
  }
  idx.postings_.assign(idx.vocab_.size(), {});
  const auto& jp = j.at("postings");
  if (jp.size() != idx.vocab_.size()) fail_data("index: postings table size mismatch");
  for (std::size_t t = 0; t < jp.size(); ++t)
    for (const auto& p : jp[t])
      idx.postings_[t].push_back({p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()});
  idx.avg_doc_length_ = idx.documents_.empty() ? 0.0 : total / static_cast<double>(idx.documents_.size());
  return idx;
}

std::string CorpusIndex::serialize() const { return to_json().dump(); }

std::vector<RawDocument> parse_corpus_jsonl(std::string_view content) {
  std::vector<RawDocument> docs;
  std::unordered_map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    ++line_no;
    const std::string line = trim(content.substr(start, end - start));
    start = end + 1;
    if (line.empty()) continue;
    const auto where = "corpus line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail_data(where + "malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("text") ||
        !j["text"].is_string())
      fail_data(where + "record needs string fields 'id' and 'text'");
    RawDocument d{j["id"].get<std::string>(), j["text"].get<std::string>(), {}};
    if (j.contains("title")) {
      if (!j["title"].is_string()) fail_data(where + "'title' must be a string");
      d.title = j["title"].get<std::string>();
    }
    if (trim(d.text).empty()) fail_data(where + "empty text for id '" + d.id + "'");
    if (!seen.emplace(d.id, line_no).second)
      fail_data(where + "duplicate document id '" + d.id + "' (first seen on line " +
                std::to_string(seen[d.id]) + ")");
    docs.push_back(std::move(d));
  }
  return docs;
}

CorpusIndex ingest_corpus(const std::string& path, const TokenizerConfig& config) {
  return CorpusIndex::build(parse_corpus_jsonl(read_file(path)), config);
}

}  // namespace autorag::corpus
