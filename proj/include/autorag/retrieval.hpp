#pragma once

// Hybrid sparse/dense retrieval: Okapi BM25, mean-pooled embeddings,
// alpha-weighted fusion, reciprocal rank fusion and the retrieval policy
// adapter.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "autorag/corpus.hpp"
#include "autorag/prompt.hpp"
#include "autorag/tensor.hpp"
#include "autorag/util.hpp"

namespace autorag::retrieval {

using corpus::TokenId;

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Non-negative IDF: ln(1 + (N - df + 0.5) / (df + 0.5)).
double bm25_idf(std::size_t n_docs, std::size_t df);

/// Okapi BM25 over the distinct non-special query terms.
double bm25_score(std::span<const TokenId> query, std::uint32_t doc,
                  const corpus::CorpusIndex& index, const Bm25Params& params = {});
double bm25_score(std::span<const TokenId> query, std::string_view doc_id,
                  const corpus::CorpusIndex& index, const Bm25Params& params = {});

/// Scores for every document at once through the inverted index.
Vec bm25_score_all(std::span<const TokenId> query, const corpus::CorpusIndex& index,
                   const Bm25Params& params = {});

/// L2-normalized mean of embedding rows.
Vec embed_text(std::span<const TokenId> tokens, const Matrix& table);

/// Dot product of two unit vectors; rejects inputs whose norm is off by
/// more than 1e-6.
double dense_sim(std::span<const double> a, std::span<const double> b);

double hybrid_score(double bm25_norm, double dense, double alpha);

struct RankingList {
  std::string ranker_id;
  std::vector<std::string> doc_ids;  // rank 1 first
};

struct FusedScore {
  std::string doc_id;
  double score;
};

/// RRF(d) = sum over rankers of 1 / (k + rank). Sorted by score descending,
/// ties broken by ascending doc id.
std::vector<FusedScore> rrf_fuse(const std::vector<RankingList>& rankings, double k);

struct RetrievalScore {
  std::string doc_id;
  std::uint32_t doc = 0;
  double bm25 = 0.0;
  double dense = 0.0;
  double bm25_norm = 0.0;
  double hybrid = 0.0;
  double rrf = 0.0;  // 0 when the document was outside the fusion pool
  std::map<std::string, int> ranks;
};

struct RetrieverConfig {
  double alpha = 0.6;
  double rrf_k = 60.0;
  std::size_t top_k = 10;
  std::size_t pool_size = 10;
  bool rrf_enabled = true;
  Bm25Params bm25{};
};

/// Precomputes document embeddings once; concurrent retrieve() calls are safe.
class HybridRetriever {
 public:
  HybridRetriever(const corpus::CorpusIndex& index, const Matrix& embeddings,
                  RetrieverConfig config);

  std::vector<RetrievalScore> retrieve(const prompt::StructuredPrompt& prompt) const;
  std::vector<RetrievalScore> retrieve_tokens(std::span<const TokenId> query) const;

  const RetrieverConfig& config() const { return config_; }
  const Vec& doc_embedding(std::uint32_t doc) const { return doc_embeddings_.at(doc); }
  const corpus::CorpusIndex& index() const { return index_; }

 private:
  const corpus::CorpusIndex& index_;
  const Matrix& embeddings_;
  RetrieverConfig config_;
  std::vector<Vec> doc_embeddings_;  // empty vector when a document has no known token
};

std::vector<RetrievalScore> retrieve_topk(const prompt::StructuredPrompt& prompt,
                                          const corpus::CorpusIndex& index,
                                          const Matrix& embeddings, const RetrieverConfig& config);

/// Non-special tokens only; what the sparse and dense scorers see.
std::vector<TokenId> content_tokens(std::span<const TokenId> tokens);

// ---------------------------------------------------------------------------
// Retrieval policy adapter: pi(d | x') = softmax_d( w2 . tanh((W1 + B1 A1) f) )
// with f = [embed(x'); embed(d)]. Frozen by default.

struct PolicyAdapterParams {
  Matrix w1;  // hidden x feature
  Matrix a1;  // rank x feature
  Matrix b1;  // hidden x rank, zero at init
  Vec w2;     // hidden
  bool frozen = true;

  std::size_t feature_dim() const { return w1.cols(); }
  std::size_t rank() const { return a1.rows(); }
};

PolicyAdapterParams make_policy_adapter(std::size_t feature_dim, std::size_t hidden,
                                        std::size_t rank, std::uint64_t seed);

Vec policy_features(std::span<const double> prompt_embedding, std::span<const double> doc_embedding);

/// Unnormalized policy score of one prompt-document feature vector.
double policy_logit(std::span<const double> features, const PolicyAdapterParams& params);

Vec policy_score(std::span<const double> prompt_feat, const std::vector<Vec>& doc_feats,
                 const PolicyAdapterParams& params);

/// -log( e^pos / (e^pos + sum_j e^neg_j) ), computed without cancellation.
double policy_contrastive_loss(double sim_pos, std::span<const double> sim_negs);

struct PolicyExample {
  Vec prompt;
  Vec positive;
  std::vector<Vec> negatives;
};

struct PolicyGradients {
  Matrix a1;
  Matrix b1;
};

/// Loss and gradient of the contrastive objective w.r.t. the low-rank factors.
double policy_loss_and_grad(const PolicyExample& ex, const PolicyAdapterParams& params,
                            PolicyGradients* grad);

/// Plain SGD on the low-rank factors. Returns the mean loss per step.
std::vector<double> train_policy(PolicyAdapterParams& params,
                                 const std::vector<PolicyExample>& examples, double lr,
                                 std::size_t steps);

}  // namespace autorag::retrieval
