#include "autorag/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "autorag/error.hpp"
#include "autorag/util.hpp"

namespace autorag::prompt {

namespace {

const std::set<std::string> kWhWords = {"who",  "what",  "when", "where", "why",
                                        "how",  "which", "whom", "whose"};
const std::set<std::string> kAuxiliaries = {"is",   "are",   "was",    "were",  "do",
                                            "does", "did",   "can",    "could", "will",
                                            "would", "should", "has",  "have",  "had"};

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  return to_lower(s.substr(0, prefix.size())) == to_lower(prefix);
}

bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return std::isalnum(u) || u >= 128;
}

std::string first_word(std::string_view s) {
  std::size_t e = 0;
  while (e < s.size() && is_word_char(s[e])) ++e;
  return to_lower(s.substr(0, e));
}

std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

std::string match_case(std::string_view matched, std::string replacement) {
  if (matched.empty() || replacement.empty()) return replacement;
  const auto c = static_cast<unsigned char>(matched[0]);
  if (std::isupper(c))
    replacement[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(replacement[0])));
  else if (std::islower(c))
    replacement[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(replacement[0])));
  return replacement;
}

struct Candidate {
  CorruptionKind kind;
  std::size_t pos;
  std::size_t len;
  std::string replacement;
};

// Word-boundary, case-insensitive phrase occurrences.
std::vector<std::size_t> find_phrase(const std::string& lower_text, const std::string& phrase) {
  std::vector<std::size_t> hits;
  if (phrase.empty()) return hits;
  for (std::size_t p = lower_text.find(phrase); p != std::string::npos;
       p = lower_text.find(phrase, p + 1)) {
    const bool left = p == 0 || !is_word_char(lower_text[p - 1]);
    const std::size_t e = p + phrase.size();
    const bool right = e == lower_text.size() || !is_word_char(lower_text[e]);
    if (left && right) hits.push_back(p);
  }
  return hits;
}

bool followed_by_not(const std::string& lower_text, std::size_t end) {
  return lower_text.compare(end, 4, " not") == 0 &&
         (end + 4 == lower_text.size() || !is_word_char(lower_text[end + 4]));
}

std::vector<Candidate> collect_candidates(std::string_view text,
                                          const std::vector<CorruptionRule>& rules) {
  const std::string lower = to_lower(text);
  std::vector<Candidate> out;
  for (const auto& rule : rules) {
    if (rule.kind == CorruptionKind::number_flip) {
      for (std::size_t p = 0; p < lower.size();) {
        if (!std::isdigit(static_cast<unsigned char>(lower[p]))) {
          ++p;
          continue;
        }
        std::size_t e = p;
        while (e < lower.size() && std::isdigit(static_cast<unsigned char>(lower[e]))) ++e;
        const bool left = p == 0 || !is_word_char(lower[p - 1]);
        const bool right = e == lower.size() || !is_word_char(lower[e]);
        if (left && right && e - p <= 15) {
          const long value = std::stol(lower.substr(p, e - p));
          for (long off : rule.offsets) {
            if (off == 0 || value + off < 0) continue;
            out.push_back({rule.kind, p, e - p, std::to_string(value + off)});
          }
        }
        p = e;
      }
      continue;
    }
    for (std::size_t p : find_phrase(lower, rule.pattern)) {
      // "is" must not fire inside an already negated "is not".
      if (rule.kind == CorruptionKind::negation_flip &&
          rule.replacement.find(" not") != std::string::npos &&
          followed_by_not(lower, p + rule.pattern.size()))
        continue;
      out.push_back({rule.kind, p, rule.pattern.size(),
                     match_case(text.substr(p, rule.pattern.size()), rule.replacement)});
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> read_pairs(const nlohmann::json& j,
                                                            const char* key) {
  std::vector<std::pair<std::string, std::string>> out;
  if (!j.contains(key)) return out;
  for (const auto& p : j.at(key)) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_string())
      fail_data(std::string("rule table: '") + key + "' entries must be [from, to] string pairs");
    out.emplace_back(p[0].get<std::string>(), p[1].get<std::string>());
  }
  return out;
}

std::size_t count_words(std::string_view text) {
  std::size_t n = 0;
  bool in = false;
  for (char c : text) {
    const bool w = is_word_char(c);
    if (w && !in) ++n;
    in = w;
  }
  return n;
}

std::string query_for(const corpus::Document& d) {
  if (!d.title.empty()) return d.title;
  std::string out;
  std::size_t words = 0;
  for (char c : d.text) {
    if (c == '.' || c == '!' || c == '?') break;
    out.push_back(c);
    if (c == ' ' && ++words >= 6) break;
  }
  return trim(out) + "?";
}

std::string span_of(const corpus::Document& d, const corpus::Vocabulary& vocab) {
  const auto& t = d.tokens;
  std::size_t end = t.size();
  const auto dot = vocab.id(".");
  for (std::size_t i = 0; i + 1 < t.size(); ++i) {
    if (t[i] == dot) {
      end = i + 1;
      break;
    }
  }
  if (end == t.size()) end = std::max<std::size_t>(1, (3 * t.size() + 3) / 4);
  return corpus::detokenize(std::span(t).first(end), vocab);
}

}  // namespace

std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::entity_swap: return "entity_swap";
    case CorruptionKind::number_flip: return "number_flip";
    case CorruptionKind::negation_flip: return "negation_flip";
    case CorruptionKind::span_replace: return "span_replace";
  }
  return "unknown";
}

std::string to_string(TemplateId t) {
  return t == TemplateId::question ? "question" : "declarative";
}

std::string to_string(Provenance p) { return p == Provenance::rule ? "rule" : "template"; }

StructuredPrompt rewrite_prompt(std::string_view raw, TemplateSet mode) {
  const std::string s = trim(raw);
  if (s.empty()) fail_usage("rewrite_prompt: empty query");
  if (!mode.question && !mode.declarative) fail_usage("rewrite_prompt: no template enabled");

  StructuredPrompt out{std::string(raw), s, TemplateId::question, Provenance::template_only};
  if (starts_with_ci(s, trim(kQuestionPrefix))) return out;
  if (starts_with_ci(s, kDeclarativePrefix)) {
    out.template_id = TemplateId::declarative;
    return out;
  }

  std::string body = s;
  const bool had_question_mark = body.back() == '?';
  while (!body.empty() && (body.back() == '?' || body.back() == '.' || body.back() == '!'))
    body.pop_back();
  body = trim(body);
  if (body.empty()) fail_usage("rewrite_prompt: query has no words");

  const std::string head = first_word(body);
  const bool leading_interrogative = kWhWords.count(head) || kAuxiliaries.count(head);
  const bool interrogative = had_question_mark || leading_interrogative;

  // Tie-break: the question template wins whenever it is enabled and the
  // query reads as a question.
  if ((interrogative && mode.question) || !mode.declarative) {
    bool changed = !had_question_mark;
    if (!leading_interrogative) {
      body = "Does " + body;
      changed = true;
    }
    out.rewritten = std::string(kQuestionPrefix) + capitalize(body) + "?";
    out.template_id = TemplateId::question;
    out.provenance = changed ? Provenance::rule : Provenance::template_only;
  } else {
    out.rewritten = std::string(kDeclarativePrefix) + body + ".";
    out.template_id = TemplateId::declarative;
  }
  return out;
}

std::vector<CorruptionRule> load_rule_table(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format_version", 0) != 1)
    fail_data("rule table: expected an object with format_version 1");
  std::vector<CorruptionRule> rules;
  for (const auto& [a, b] : read_pairs(j, "entity_swap")) {
    rules.push_back({CorruptionKind::entity_swap, to_lower(a), b, {}});
    rules.push_back({CorruptionKind::entity_swap, to_lower(b), a, {}});
  }
  if (j.contains("number_flip")) {
    auto offsets = j["number_flip"].at("offsets").get<std::vector<long>>();
    if (offsets.empty()) fail_data("rule table: number_flip needs at least one offset");
    rules.push_back({CorruptionKind::number_flip, {}, {}, std::move(offsets)});
  }
  for (const auto& [pos, neg] : read_pairs(j, "negation_flip")) {
    rules.push_back({CorruptionKind::negation_flip, to_lower(pos), neg, {}});
    rules.push_back({CorruptionKind::negation_flip, to_lower(neg), pos, {}});
  }
  for (const auto& [from, to] : read_pairs(j, "span_replace"))
    rules.push_back({CorruptionKind::span_replace, to_lower(from), to, {}});
  for (const auto& r : rules)
    if (r.kind != CorruptionKind::number_flip && (r.pattern.empty() || r.pattern == to_lower(r.replacement)))
      fail_data("rule table: rule '" + r.pattern + "' would not change the text");
  return rules;
}

std::vector<CorruptionRule> load_rule_table_file(const std::string& path) {
  try {
    return load_rule_table(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail_data("rule table " + path + ": " + e.what());
  }
}

SynonymTable load_synonym_table(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format_version", 0) != 1 || !j.contains("synonyms"))
    fail_data("synonym table: expected an object with format_version 1 and 'synonyms'");
  SynonymTable t;
  for (const auto& [word, alts] : j["synonyms"].items()) {
    auto v = alts.get<std::vector<std::string>>();
    if (v.empty()) fail_data("synonym table: empty list for '" + word + "'");
    t.emplace(to_lower(word), std::move(v));
  }
  return t;
}

SynonymTable load_synonym_table_file(const std::string& path) {
  try {
    return load_synonym_table(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail_data("synonym table " + path + ": " + e.what());
  }
}

std::optional<CorruptionResult> corrupt_rule_based(std::string_view text,
                                                   const std::vector<CorruptionRule>& rules,
                                                   std::uint64_t seed) {
  if (text.empty()) return std::nullopt;
  const auto candidates = collect_candidates(text, rules);
  if (candidates.empty()) return std::nullopt;
  Rng rng(derive_seed(seed, 0xC0));
  const auto& c = candidates[rng.below(candidates.size())];
  CorruptionResult r;
  r.text = std::string(text.substr(0, c.pos)) + c.replacement + std::string(text.substr(c.pos + c.len));
  r.trace.push_back({c.kind, c.pos, std::string(text.substr(c.pos, c.len)), c.replacement});
  return r;
}

std::optional<ParaphraseResult> paraphrase_mutate(std::string_view text,
                                                  const SynonymTable& synonyms,
                                                  const std::vector<CorruptionRule>& rules,
                                                  std::uint64_t seed) {
  if (text.empty()) return std::nullopt;
  if (count_words(text) < kMinParaphraseWords) {
    auto c = corrupt_rule_based(text, rules, seed);
    if (!c) return std::nullopt;
    return ParaphraseResult{std::string(text), std::move(*c), true};
  }
  Rng rng(derive_seed(seed, 0x5A));
  std::string para;
  for (std::size_t p = 0; p < text.size();) {
    if (!is_word_char(text[p])) {
      para.push_back(text[p++]);
      continue;
    }
    std::size_t e = p;
    while (e < text.size() && is_word_char(text[e])) ++e;
    const std::string_view word = text.substr(p, e - p);
    auto it = synonyms.find(to_lower(word));
    if (it != synonyms.end()) para += match_case(word, it->second[rng.below(it->second.size())]);
    else para += word;
    p = e;
  }
  auto c = corrupt_rule_based(para, rules, seed);
  if (!c) return std::nullopt;
  return ParaphraseResult{std::move(para), std::move(*c), false};
}

nlohmann::json to_json(const LabeledPair& p) {
  auto trace = nlohmann::json::array();
  for (const auto& s : p.trace)
    trace.push_back({{"kind", to_string(s.kind)}, {"position", s.position}, {"from", s.from}, {"to", s.to}});
  return {{"prompt",
           {{"raw", p.prompt.raw},
            {"rewritten", p.prompt.rewritten},
            {"template_id", to_string(p.prompt.template_id)},
            {"provenance", to_string(p.prompt.provenance)}}},
          {"completion", p.completion},
          {"evidence", p.evidence},
          {"doc_id", p.doc_id},
          {"label", static_cast<int>(p.label)},
          {"source", p.source == Source::synthetic ? "synthetic" : "human_aligned"},
          {"generator", p.generator},
          {"trace", std::move(trace)}};
}

LabeledPair labeled_pair_from_json(const nlohmann::json& j) {
  LabeledPair p;
  const auto& jp = j.at("prompt");
  p.prompt.raw = jp.at("raw").get<std::string>();
  p.prompt.rewritten = jp.at("rewritten").get<std::string>();
  p.prompt.template_id =
      jp.at("template_id") == "declarative" ? TemplateId::declarative : TemplateId::question;
  p.prompt.provenance = jp.at("provenance") == "rule" ? Provenance::rule : Provenance::template_only;
  p.completion = j.at("completion").get<std::string>();
  p.evidence = j.at("evidence").get<std::string>();
  p.doc_id = j.value("doc_id", std::string{});
  const int label = j.at("label").get<int>();
  if (label != 0 && label != 1) fail_data("labeled pair: label must be 0 or 1");
  p.label = static_cast<Label>(label);
  p.source = j.at("source") == "synthetic" ? Source::synthetic : Source::human_aligned;
  p.generator = j.value("generator", std::string{});
  static const std::vector<std::pair<std::string, CorruptionKind>> kinds = {
      {"entity_swap", CorruptionKind::entity_swap},
      {"number_flip", CorruptionKind::number_flip},
      {"negation_flip", CorruptionKind::negation_flip},
      {"span_replace", CorruptionKind::span_replace}};
  for (const auto& s : j.value("trace", nlohmann::json::array())) {
    Substitution sub{CorruptionKind::entity_swap, s.at("position").get<std::size_t>(),
                     s.at("from").get<std::string>(), s.at("to").get<std::string>()};
    for (const auto& [name, k] : kinds)
      if (s.at("kind") == name) sub.kind = k;
    p.trace.push_back(std::move(sub));
  }
  return p;
}

std::size_t max_negative_set_size(const corpus::CorpusIndex& corpus,
                                  const std::vector<CorruptionRule>& rules) {
  std::size_t n = 0;
  for (std::uint32_t i = 0; i < corpus.size(); ++i)
    if (!collect_candidates(corpus.document(i).text, rules).empty()) ++n;
  return 2 * n;
}

std::vector<LabeledPair> build_negative_set(const corpus::CorpusIndex& corpus, std::size_t n,
                                            std::uint64_t seed,
                                            const std::vector<CorruptionRule>& rules,
                                            const SynonymTable& synonyms) {
  if (n % 2 != 0) fail_usage("build_negative_set: n must be even, got " + std::to_string(n));
  if (n == 0) return {};
  if (corpus.size() == 0) fail_data("build_negative_set: corpus is empty");

  std::vector<std::uint32_t> sources;
  for (std::uint32_t i = 0; i < corpus.size(); ++i)
    if (!collect_candidates(corpus.document(i).text, rules).empty()) sources.push_back(i);
  const std::size_t half = n / 2;
  if (sources.size() < half)
    fail_data("build_negative_set: requested " + std::to_string(n) + " pairs but only " +
              std::to_string(sources.size()) + " documents admit a corruption; achievable maximum is " +
              std::to_string(2 * sources.size()));
  Rng rng(derive_seed(seed, 0x4E47));
  rng.shuffle(sources);

  const std::size_t rule_count = (7 * half + 5) / 10;
  const std::size_t human_count = (6 * half + 5) / 10;

  std::vector<LabeledPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < half; ++i) {
    const auto& doc = corpus.document(sources[i]);
    const auto prompt = rewrite_prompt(query_for(doc));
    const std::uint64_t sample_seed = derive_seed(seed, i + 1);

    LabeledPair g{prompt, doc.text, doc.text, doc.id, Label::grounded, Source::human_aligned, "verbatim", {}};
    if (i >= human_count) {
      g.completion = span_of(doc, corpus.vocab());
      g.source = Source::synthetic;
      g.generator = "span";
    }
    out.push_back(std::move(g));

    LabeledPair h{prompt, {}, doc.text, doc.id, Label::hallucinated, Source::synthetic, "rule", {}};
    std::optional<CorruptionResult> corrupted;
    if (i >= rule_count) {
      if (auto pm = paraphrase_mutate(doc.text, synonyms, rules, sample_seed)) {
        corrupted = std::move(pm->corrupted);
        h.generator = "paraphrase";
      }
    }
    if (!corrupted) corrupted = corrupt_rule_based(doc.text, rules, sample_seed);
    if (!corrupted || corrupted->text == doc.text)
      fail_invariant("build_negative_set: corruption did not change document '" + doc.id + "'");
    h.completion = std::move(corrupted->text);
    h.trace = std::move(corrupted->trace);
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace autorag::prompt
