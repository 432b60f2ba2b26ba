#pragma once

// Hallucination probability from a linear head over pooled embeddings and
// lexical overlap, plus diagnostic signals (attention entropy, semantic
// drift, Integrated Gradients).

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "autorag/corpus.hpp"
#include "autorag/distribution.hpp"
#include "autorag/model.hpp"
#include "autorag/prompt.hpp"
#include "autorag/tensor.hpp"

namespace autorag::detect {

using corpus::TokenId;

inline constexpr int kFeatureSchemaVersion = 1;
inline constexpr double kDefaultTau = 0.7;

struct ClassifierParams {
  Vec weights;
  double bias = 0.0;

  static ClassifierParams zeros(std::size_t feature_dim) { return {Vec(feature_dim, 0.0), 0.0}; }
  std::size_t feature_dim() const { return weights.size(); }
};

struct HallucinationVerdict {
  double p_hall = 0.0;
  bool flag = false;
  double tau = kDefaultTau;
};

inline HallucinationVerdict make_verdict(double p_hall, double tau) {
  return {p_hall, p_hall > tau, tau};
}

/// Mean of the embedding rows of the non-special tokens; zero vector when
/// there are none.
Vec pooled_embedding(std::span<const TokenId> tokens, const Matrix& table);

/// Fraction of the generation's content tokens that occur anywhere in docs.
double unigram_precision(std::span<const TokenId> gen, const std::vector<std::vector<TokenId>>& docs);

/// [pooled(y); pooled(concat D); overlap], length 2 d + 1.
Vec featurize(std::span<const TokenId> gen, const std::vector<std::vector<TokenId>>& docs,
              const Matrix& table);

double sigmoid(double z);
double predict(std::span<const double> features, const ClassifierParams& params);

HallucinationVerdict classify(std::span<const TokenId> gen,
                              const std::vector<std::vector<TokenId>>& docs, const Matrix& table,
                              const ClassifierParams& params, double tau = kDefaultTau);

struct DetectionSample {
  Vec features;
  int label = 0;  // 1 = hallucinated
  prompt::Source source = prompt::Source::synthetic;
};

struct DatasetComposition {
  std::size_t batch_size = 0;
  std::size_t batches = 0;
  std::size_t grounded = 0;
  std::size_t hallucinated = 0;
  std::size_t dropped = 0;
  double synthetic_fraction = 0.0;
  double human_aligned_fraction = 0.0;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

struct DetectionDataset {
  std::vector<DetectionSample> samples;
  std::vector<std::vector<std::size_t>> batches;  // indices into samples, half of each class
  DatasetComposition composition;

  std::size_t feature_dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
};

/// Groups samples into batches with equal class counts. Samples that cannot
/// be balanced are dropped and reported in composition.warnings.
DetectionDataset make_dataset(std::vector<DetectionSample> samples, std::size_t batch_size);

DetectionDataset build_detection_dataset(const std::vector<prompt::LabeledPair>& pairs,
                                         const corpus::Vocabulary& vocab, const Matrix& table,
                                         std::size_t batch_size);

/// Mean binary cross-entropy; adds the gradient into `grad` when non-null.
double bce_loss(const ClassifierParams& params, std::span<const DetectionSample> samples,
                ClassifierParams* grad, double l2 = 0.0);

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 0.5;
  std::uint64_t seed = 1;
  double l2 = 0.0;
};

struct TrainResult {
  ClassifierParams params;
  std::vector<double> loss_curve;  // mean BCE after each epoch
};

TrainResult train_classifier(const DetectionDataset& dataset, const TrainConfig& config);

double accuracy(const ClassifierParams& params, std::span<const DetectionSample> samples,
                double threshold = 0.5);

nlohmann::json classifier_to_json(const ClassifierParams& params);
ClassifierParams classifier_from_json(const nlohmann::json& j);

// --- diagnostics -----------------------------------------------------------

/// Shannon entropy (nats) of one probability row.
double row_entropy(std::span<const double> row);

/// Mean entropy over the causal attention rows of every layer and head,
/// from row trace.logits_from onward (the decoding steps).
double attention_entropy(const lm::ForwardTrace& trace);

struct DriftScores {
  double cosine = 0.0;
  double jsd = 0.0;
};

DriftScores semantic_drift(const DistributionSeq& p_gen, const DistributionSeq& p_ret);

/// Score and gradient at x. The gradient span has the size of x.
using ScoreFn = std::function<double(std::span<const double> x, std::span<double> grad)>;

/// Midpoint Riemann approximation of Integrated Gradients.
Vec integrated_gradients(const ScoreFn& score, std::span<const double> input,
                         std::span<const double> baseline, std::size_t steps = 50);

struct TokenAttribution {
  Vec per_token;  // attribution summed over embedding dimensions, one per input token
  double score_input = 0.0;
  double score_baseline = 0.0;
};

/// Log-likelihood of `target` after `context` under the LM, attributed to
/// the context and target token embeddings against an all-zero baseline.
TokenAttribution lm_token_attributions(std::span<const TokenId> context,
                                       std::span<const TokenId> target,
                                       const lm::ToyTransformer& model,
                                       const lm::LoraAdapterStack* adapters, bool active,
                                       std::size_t steps = 50);

}  // namespace autorag::detect
