#pragma once

// Evaluation metrics and their aggregation into a run report.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "autorag/corpus.hpp"
#include "autorag/divergence.hpp"

namespace autorag::metrics {

using corpus::TokenId;

/// LCS-based F1 (beta = 1).
double rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference);
std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b);

/// Per-generation values that feed the report.
struct RecordMetrics {
  std::string fingerprint;
  bool flagged = false;
  bool adapter_active = false;
  double kl_drift = 0.0;
  double jsd = 0.0;
  double attention_entropy = 0.0;
  std::optional<double> rouge_l;  // only when a reference answer exists

  nlohmann::json to_json() const;
  static RecordMetrics from_json(const nlohmann::json& j);
};

double hallucination_rate(std::span<const RecordMetrics> records);

struct MetricReport {
  std::string fingerprint;
  std::size_t samples = 0;
  std::size_t flagged = 0;
  std::size_t adapter_activations = 0;
  std::size_t rouge_samples = 0;
  double kl_drift = 0.0;
  double jsd = 0.0;
  double rouge_l = 0.0;
  double attention_entropy = 0.0;
  double hallucination_rate = 0.0;

  nlohmann::json to_json() const;
  /// Plain-text table; divergences are shown in nats and bits.
  std::string to_text() const;
};

/// Means over records. All records must carry the same fingerprint.
MetricReport aggregate_report(std::span<const RecordMetrics> records);

}  // namespace autorag::metrics
