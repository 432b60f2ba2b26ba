#pragma once

// End-to-end orchestration: rewrite, retrieve, two-pass gated decoding,
// detection, correction and evaluation, with append-only JSON-lines logs.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "autorag/config.hpp"
#include "autorag/corpus.hpp"
#include "autorag/detect.hpp"
#include "autorag/feedback.hpp"
#include "autorag/metrics.hpp"
#include "autorag/model.hpp"
#include "autorag/prompt.hpp"
#include "autorag/retrieval.hpp"

namespace autorag::pipeline {

using corpus::TokenId;

struct Query {
  std::string id;
  std::string text;
  std::string reference;  // grounded answer; empty when unknown
};

std::vector<Query> parse_queries_jsonl(std::string_view content);
std::vector<Query> load_queries(const std::string& path);

/// Read-only state shared by generation; adapters are replaced only between
/// phases.
class Stores {
 public:
  Stores(const PipelineConfig& config, corpus::CorpusIndex index,
         detect::ClassifierParams classifier);
  Stores(const Stores&) = delete;
  Stores& operator=(const Stores&) = delete;

  const PipelineConfig& config() const { return config_; }
  const corpus::CorpusIndex& index() const { return index_; }
  const lm::ToyTransformer& base() const { return base_; }
  /// The model decoding runs on: the base, or its quantized copy under qlora.
  const lm::ToyTransformer& model() const { return qlora_ ? *qlora_ : base_; }
  const Matrix& embeddings() const { return base_.token_embedding(); }
  const retrieval::HybridRetriever& retriever() const { return *retriever_; }
  const detect::ClassifierParams& classifier() const { return classifier_; }
  void set_classifier(detect::ClassifierParams c) { classifier_ = std::move(c); }

  lm::LoraAdapterStack& adapters() { return adapters_; }
  const lm::LoraAdapterStack& adapters() const { return adapters_; }
  void set_adapters(lm::LoraAdapterStack a);

  const std::optional<retrieval::PolicyAdapterParams>& policy() const { return policy_; }
  void set_policy(std::optional<retrieval::PolicyAdapterParams> p) { policy_ = std::move(p); }

  /// Config, vocabulary and base-model identity shared by every record.
  const std::string& fingerprint() const { return fingerprint_; }
  /// Hash of the frozen weights and the serialized index.
  std::string state_hash() const;

 private:
  PipelineConfig config_;
  corpus::CorpusIndex index_;
  lm::ToyTransformer base_;
  std::optional<lm::ToyTransformer> qlora_;
  std::unique_ptr<retrieval::HybridRetriever> retriever_;
  detect::ClassifierParams classifier_;
  lm::LoraAdapterStack adapters_;
  std::optional<retrieval::PolicyAdapterParams> policy_;
  std::string fingerprint_;
};

/// Detector override: p_hall for (generation, documents). Defaults to the
/// stored classifier.
using Scorer = std::function<double(std::span<const TokenId> gen,
                                    const std::vector<std::vector<TokenId>>& docs)>;

struct PassResult {
  std::vector<TokenId> tokens;
  std::string text;
  double p_hall = 0.0;
};

struct RunRecord {
  std::string query_id;
  prompt::StructuredPrompt prompt;
  std::vector<retrieval::RetrievalScore> retrieval;
  std::vector<double> policy_probs;  // aligned with retrieval when the policy is active
  std::vector<std::string> context_docs;
  PassResult pass1;
  std::optional<PassResult> pass2;
  double p_hall = 0.0;  // pass-1 score that drove the gate
  double tau = 0.7;
  bool adapter_active = false;
  std::string output;
  double final_p_hall = 0.0;
  bool flagged = false;
  std::optional<feedback::LossBreakdown> loss;
  metrics::RecordMetrics metrics;
  Vec attributions;  // per context token, when ig_steps > 0
  std::string status = "ok";
  std::string error;
  std::string timestamp;
  std::string fingerprint;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

/// The record without its timestamp, for replay comparison.
nlohmann::json comparable(const nlohmann::json& record);

/// Rewrite, retrieve, decode with gating, detect. Stage errors yield a
/// record with status "error".
RunRecord run_generate(const Query& query, const Stores& stores, const Scorer& scorer = {});

std::vector<RunRecord> run_generate_all(const std::vector<Query>& queries, const Stores& stores,
                                        const Scorer& scorer = {});

/// Re-derives adapter_active from each logged p_hall and tau; returns the
/// indices of records that disagree.
std::vector<std::size_t> verify_gating(const std::vector<RunRecord>& records);

// --- correction -------------------------------------------------------------

struct CorrectionExample {
  Query query;
  prompt::StructuredPrompt prompt;
  std::vector<TokenId> prompt_tokens;
  std::vector<std::vector<TokenId>> docs;
  std::vector<std::string> doc_ids;
  double p_hall = 0.0;  // pass-1 gate score
  std::vector<TokenId> target;
  std::vector<TokenId> negative;
  double target_p_hall = 0.0;
  double negative_p_hall = 0.0;
};

/// Runs rewrite, retrieval and the pass-1 gate for each query with a
/// reference answer. Queries without a reference are skipped. The negative
/// is a rule-corrupted reference, or the greedy answer of the adapters in
/// config.negative_checkpoint when that is set.
std::vector<CorrectionExample> prepare_correction(const std::vector<Query>& queries,
                                                  const Stores& stores,
                                                  const std::vector<prompt::CorruptionRule>& rules,
                                                  const Scorer& scorer = {});

struct CorrectOptions {
  std::string run_dir;  // empty: nothing is written
  bool resume = false;
  std::optional<std::size_t> stop_after_updates;  // simulated interruption
  std::optional<double> lr;                       // overrides config.lr
};

struct CorrectResult {
  std::vector<nlohmann::json> trace;
  std::size_t updates = 0;
  std::size_t skips = 0;
  bool completed = false;
};

/// Sequential feedback steps over the flagged examples. Writes trace.jsonl,
/// periodic checkpoints and adapters.json when run_dir is set.
CorrectResult run_correct(const std::vector<CorrectionExample>& examples, Stores& stores,
                          const CorrectOptions& options);

/// Trains the retrieval policy adapter from pass-1 flag co-occurrence.
std::optional<retrieval::PolicyAdapterParams> train_policy_from_examples(
    const std::vector<CorrectionExample>& examples, const Stores& stores);

// --- persistence ------------------------------------------------------------

nlohmann::json adapter_checkpoint(const Stores& stores);
lm::LoraAdapterStack load_adapter_checkpoint(const nlohmann::json& j, const Stores& stores);

nlohmann::json policy_to_json(const retrieval::PolicyAdapterParams& p);
retrieval::PolicyAdapterParams policy_from_json(const nlohmann::json& j);

std::vector<RunRecord> read_records(const std::string& path);
void write_records(const std::string& path, const std::vector<RunRecord>& records);

}  // namespace autorag::pipeline
