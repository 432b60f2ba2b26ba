#pragma once

// Flat key = value pipeline configuration. Every key has a default; unknown
// keys and malformed values are usage errors.

#include <cstdint>
#include <string>
#include <vector>

#include "autorag/feedback.hpp"
#include "autorag/lora.hpp"
#include "autorag/model.hpp"
#include "autorag/prompt.hpp"
#include "autorag/retrieval.hpp"

namespace autorag {

struct PipelineConfig {
  std::string corpus_path;
  std::string rules_path;
  std::string synonyms_path;
  std::string queries_path;

  std::uint64_t model_seed = 1;
  std::uint64_t data_seed = 2;
  std::uint64_t train_seed = 3;
  std::uint64_t adapter_seed = 4;

  std::size_t vocab_cap = 8192;
  prompt::TemplateSet templates{};

  retrieval::RetrieverConfig retriever{};
  std::size_t context_docs = 2;
  bool policy_frozen = true;
  std::size_t policy_hidden = 16;
  std::size_t policy_rank = 4;
  double policy_lr = 0.05;
  std::size_t policy_steps = 50;
  double policy_neg_threshold = 0.5;

  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t max_seq = 128;
  std::size_t max_new_tokens = 16;

  lm::LoraConfig lora{};
  bool qlora = false;
  int qlora_bits = 4;
  std::size_t qlora_block = 64;

  double grounded_threshold = 0.3;
  double hallucinated_threshold = 0.7;
  std::string negative_checkpoint;  // empty: P- from rule-corrupted references
  feedback::LossConfig loss{};  // holds tau, lambda1, lambda2, kl_floor, contrast_clamp
  double lr = 5e-5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 1;
  std::size_t max_steps = 0;  // 0: no limit
  std::size_t checkpoint_every = 10;

  std::size_t negatives = 0;  // 0: as many as the corpus admits
  std::size_t detector_batch = 8;
  std::size_t detector_epochs = 200;
  double detector_lr = 0.5;
  double detector_l2 = 0.0;
  std::size_t ig_steps = 0;  // 0: no per-record attributions

  double tau() const { return loss.tau; }

  /// Applies one key = value assignment.
  void set(const std::string& key, const std::string& value);
  /// Raises a usage error naming the first violated constraint.
  void validate() const;
  /// Canonical text form listing every key; used as the run snapshot.
  std::string to_text() const;
  std::string fingerprint() const;

  static std::vector<std::string> keys();
  static std::string describe(const std::string& key);

  static PipelineConfig defaults();
  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::string& path);
};

lm::ModelConfig model_config(const PipelineConfig& config, std::size_t vocab_size);

}  // namespace autorag
