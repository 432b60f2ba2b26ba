#pragma once

// Query rewriting and synthetic-negative generation for detector training.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "autorag/corpus.hpp"

namespace autorag::prompt {

enum class TemplateId { question, declarative };
enum class Provenance { rule, template_only };

struct StructuredPrompt {
  std::string raw;
  std::string rewritten;
  TemplateId template_id = TemplateId::question;
  Provenance provenance = Provenance::template_only;
};

/// Which built-in templates may be selected.
struct TemplateSet {
  bool question = true;
  bool declarative = true;
};

inline constexpr std::string_view kQuestionPrefix = "Answer factually: ";
inline constexpr std::string_view kDeclarativePrefix = "Explain whether ";

/// Rewrites a raw query into one of two instruction templates.
///
/// Interrogative input (trailing '?', or a leading wh-word / auxiliary) uses
/// "Answer factually: <Q>?"; a question lacking a leading auxiliary gets
/// "Does" inserted. Anything else uses "Explain whether <proposition>.".
/// Input already in template form is returned unchanged.
StructuredPrompt rewrite_prompt(std::string_view raw, TemplateSet mode = {});

enum class CorruptionKind { entity_swap, number_flip, negation_flip, span_replace };

std::string to_string(CorruptionKind k);
std::string to_string(TemplateId t);
std::string to_string(Provenance p);

struct CorruptionRule {
  CorruptionKind kind = CorruptionKind::entity_swap;
  std::string pattern;      // lowercase phrase; unused for number_flip
  std::string replacement;  // unused for number_flip
  std::vector<long> offsets;  // number_flip only
};

struct Substitution {
  CorruptionKind kind;
  std::size_t position;  // byte offset in the input string
  std::string from;
  std::string to;
};

struct CorruptionResult {
  std::string text;
  std::vector<Substitution> trace;
};

/// Loads the rule table. Entity and negation pairs expand into both
/// directions.
std::vector<CorruptionRule> load_rule_table(const nlohmann::json& j);
std::vector<CorruptionRule> load_rule_table_file(const std::string& path);

using SynonymTable = std::unordered_map<std::string, std::vector<std::string>>;
SynonymTable load_synonym_table(const nlohmann::json& j);
SynonymTable load_synonym_table_file(const std::string& path);

/// Applies exactly one matching rule, chosen by `seed` among all
/// (rule, position) candidates. Returns nullopt when no rule matches.
std::optional<CorruptionResult> corrupt_rule_based(std::string_view text,
                                                   const std::vector<CorruptionRule>& rules,
                                                   std::uint64_t seed);

struct ParaphraseResult {
  std::string paraphrased;  // text after synonym substitution, before corruption
  CorruptionResult corrupted;
  bool fell_back = false;  // input too short; plain rule corruption was used
};

inline constexpr std::size_t kMinParaphraseWords = 3;

/// Synonym-table paraphrase followed by one rule-based corruption. This is
/// the offline stand-in for round-trip translation with mutation.
std::optional<ParaphraseResult> paraphrase_mutate(std::string_view text,
                                                  const SynonymTable& synonyms,
                                                  const std::vector<CorruptionRule>& rules,
                                                  std::uint64_t seed);

enum class Label { grounded = 0, hallucinated = 1 };
enum class Source { synthetic, human_aligned };

struct LabeledPair {
  StructuredPrompt prompt;
  std::string completion;
  std::string evidence;  // text of the grounding document
  std::string doc_id;
  Label label = Label::grounded;
  Source source = Source::human_aligned;
  std::string generator;  // verbatim | span | rule | paraphrase
  std::vector<Substitution> trace;
};

nlohmann::json to_json(const LabeledPair& p);
LabeledPair labeled_pair_from_json(const nlohmann::json& j);

/// Twice the number of documents that admit at least one corruption.
std::size_t max_negative_set_size(const corpus::CorpusIndex& corpus,
                                  const std::vector<CorruptionRule>& rules);

/// Balanced grounded/hallucinated pairs, one of each per source document.
///
/// Of the n/2 hallucinated pairs, round(0.7 n/2) come from rule corruption
/// and the rest from paraphrase_mutate. Of the n/2 grounded pairs,
/// round(0.6 n/2) are verbatim document copies (human_aligned) and the rest
/// are extracted spans (synthetic), so that 70% of the set is synthetic.
std::vector<LabeledPair> build_negative_set(const corpus::CorpusIndex& corpus, std::size_t n,
                                            std::uint64_t seed,
                                            const std::vector<CorruptionRule>& rules,
                                            const SynonymTable& synonyms);

}  // namespace autorag::prompt
