#include "autorag/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "autorag/error.hpp"
#include "autorag/kernels.hpp"

namespace autorag::retrieval {

namespace {

std::vector<TokenId> distinct_terms(std::span<const TokenId> query) {
  std::set<TokenId> s;
  for (TokenId t : query)
    if (!corpus::Vocabulary::is_special(t)) s.insert(t);
  return {s.begin(), s.end()};
}

// Order by score descending, then doc id ascending.
template <typename Score>
std::vector<std::uint32_t> order_by(const std::vector<std::uint32_t>& docs, Score score,
                                    const corpus::CorpusIndex& index) {
  std::vector<std::uint32_t> out = docs;
  std::sort(out.begin(), out.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double sa = score(a), sb = score(b);
    if (sa != sb) return sa > sb;
    return index.document(a).id < index.document(b).id;
  });
  return out;
}

}  // namespace

double bm25_idf(std::size_t n_docs, std::size_t df) {
  const double n = static_cast<double>(n_docs), f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

double bm25_score(std::span<const TokenId> query, std::uint32_t doc,
                  const corpus::CorpusIndex& index, const Bm25Params& params) {
  if (doc >= index.size()) fail_usage("bm25_score: document position out of range");
  double s = 0.0;
  for (TokenId t : distinct_terms(query)) {
    const auto tf = index.term_frequency(t, doc);
    if (tf == 0) continue;
    s += kernels::bm25_term(bm25_idf(index.size(), index.document_frequency(t)), tf,
                            index.doc_lengths()[doc], index.avg_doc_length(), params.k1, params.b);
  }
  return s;
}

double bm25_score(std::span<const TokenId> query, std::string_view doc_id,
                  const corpus::CorpusIndex& index, const Bm25Params& params) {
  const auto pos = index.find(doc_id);
  if (!pos) fail_usage("bm25_score: unknown document id '" + std::string(doc_id) + "'");
  return bm25_score(query, *pos, index, params);
}

Vec bm25_score_all(std::span<const TokenId> query, const corpus::CorpusIndex& index,
                   const Bm25Params& params) {
  std::vector<kernels::Bm25Term> terms;
  for (TokenId t : distinct_terms(query)) {
    const auto& p = index.postings(t);
    if (!p.empty()) terms.push_back({bm25_idf(index.size(), p.size()), p});
  }
  Vec scores(index.size(), 0.0);
  kernels::bm25_accumulate(terms, index.doc_lengths(), index.avg_doc_length(), params.k1,
                           params.b, scores);
  return scores;
}

Vec embed_text(std::span<const TokenId> tokens, const Matrix& table) {
  if (tokens.empty()) fail_usage("embed_text: empty token sequence");
  Vec v(table.cols(), 0.0);
  for (TokenId t : tokens) {
    if (t >= table.rows()) fail_usage("embed_text: token id " + std::to_string(t) + " out of range");
    const auto r = table.row(t);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += r[i];
  }
  for (double& x : v) x /= static_cast<double>(tokens.size());
  const double n = l2_norm(v);
  if (n == 0.0) fail_usage("embed_text: pooled embedding has zero norm");
  for (double& x : v) x /= n;
  return v;
}

double dense_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) fail_usage("dense_sim: dimension mismatch");
  if (std::abs(l2_norm(a) - 1.0) > 1e-6 || std::abs(l2_norm(b) - 1.0) > 1e-6)
    fail_usage("dense_sim: inputs must be unit vectors");
  return std::clamp(dot(a, b), -1.0, 1.0);
}

double hybrid_score(double bm25_norm, double dense, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail_usage("hybrid_score: alpha must lie in [0, 1]");
  return alpha * bm25_norm + (1.0 - alpha) * dense;
}

std::vector<FusedScore> rrf_fuse(const std::vector<RankingList>& rankings, double k) {
  if (!(k > 0.0)) fail_usage("rrf_fuse: smoothing constant k must be positive");
  if (rankings.empty()) fail_usage("rrf_fuse: no rankings to fuse");
  std::map<std::string, double> acc;
  for (const auto& r : rankings) {
    std::set<std::string> seen;
    for (std::size_t i = 0; i < r.doc_ids.size(); ++i) {
      if (!seen.insert(r.doc_ids[i]).second)
        fail_usage("rrf_fuse: duplicate doc id '" + r.doc_ids[i] + "' in ranking " + r.ranker_id);
      acc[r.doc_ids[i]] += 1.0 / (k + static_cast<double>(i + 1));
    }
  }
  std::vector<FusedScore> out;
  for (const auto& [id, s] : acc) out.push_back({id, s});
  std::stable_sort(out.begin(), out.end(),
                   [](const FusedScore& a, const FusedScore& b) { return a.score > b.score; });
  return out;
}

std::vector<TokenId> content_tokens(std::span<const TokenId> tokens) {
  std::vector<TokenId> out;
  for (TokenId t : tokens)
    if (!corpus::Vocabulary::is_special(t)) out.push_back(t);
  return out;
}

HybridRetriever::HybridRetriever(const corpus::CorpusIndex& index, const Matrix& embeddings,
                                 RetrieverConfig config)
    : index_(index), embeddings_(embeddings), config_(config) {
  if (!(config_.alpha >= 0.0 && config_.alpha <= 1.0)) fail_usage("retriever: alpha must lie in [0, 1]");
  if (!(config_.rrf_k > 0.0)) fail_usage("retriever: rrf_k must be positive");
  if (config_.top_k == 0 || config_.pool_size == 0) fail_usage("retriever: top_k and pool size must be positive");
  if (embeddings_.rows() < index_.vocab().size())
    fail_usage("retriever: embedding table smaller than the vocabulary");
  doc_embeddings_.resize(index_.size());
  const long n = static_cast<long>(index_.size());
#pragma omp parallel for schedule(static) if (n > 256)
  for (long i = 0; i < n; ++i) {
    const auto toks = content_tokens(index_.document(static_cast<std::uint32_t>(i)).tokens);
    if (!toks.empty()) doc_embeddings_[static_cast<std::size_t>(i)] = embed_text(toks, embeddings_);
  }
}

std::vector<RetrievalScore> HybridRetriever::retrieve(const prompt::StructuredPrompt& prompt) const {
  if (trim(prompt.rewritten).empty()) fail_usage("retrieve: empty prompt");
  return retrieve_tokens(corpus::tokenize(prompt.rewritten, index_.vocab()));
}

std::vector<RetrievalScore> HybridRetriever::retrieve_tokens(std::span<const TokenId> query) const {
  if (index_.size() == 0) fail_data("retrieve: index is empty");
  const auto terms = content_tokens(query);
  const Vec bm25 = bm25_score_all(terms, index_, config_.bm25);
  Vec q_emb;
  if (!terms.empty()) q_emb = embed_text(terms, embeddings_);

  const std::size_t n = index_.size();
  std::vector<RetrievalScore> scores(n);
  const auto [lo, hi] = std::minmax_element(bm25.begin(), bm25.end());
  const double range = *hi - *lo;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto& s = scores[i];
    s.doc = i;
    s.doc_id = index_.document(i).id;
    s.bm25 = bm25[i];
    s.bm25_norm = range > 0.0 ? (bm25[i] - *lo) / range : 0.0;
    s.dense = (q_emb.empty() || doc_embeddings_[i].empty()) ? 0.0
                                                             : dense_sim(q_emb, doc_embeddings_[i]);
    s.hybrid = hybrid_score(s.bm25_norm, s.dense, config_.alpha);
  }

  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  const auto hybrid_order = order_by(all, [&](std::uint32_t d) { return scores[d].hybrid; }, index_);
  for (std::size_t r = 0; r < n; ++r) scores[hybrid_order[r]].ranks["hybrid"] = static_cast<int>(r + 1);

  std::vector<std::uint32_t> final_order = hybrid_order;
  if (config_.rrf_enabled) {
    const std::size_t pool_n = std::min(config_.pool_size, n);
    std::vector<std::uint32_t> pool(hybrid_order.begin(), hybrid_order.begin() + static_cast<long>(pool_n));
    const auto by_bm25 = order_by(pool, [&](std::uint32_t d) { return scores[d].bm25; }, index_);
    const auto by_dense = order_by(pool, [&](std::uint32_t d) { return scores[d].dense; }, index_);
    RankingList l_bm25{"bm25", {}}, l_dense{"dense", {}};
    for (std::size_t r = 0; r < pool_n; ++r) {
      l_bm25.doc_ids.push_back(scores[by_bm25[r]].doc_id);
      l_dense.doc_ids.push_back(scores[by_dense[r]].doc_id);
      scores[by_bm25[r]].ranks["bm25"] = static_cast<int>(r + 1);
      scores[by_dense[r]].ranks["dense"] = static_cast<int>(r + 1);
    }
    final_order.clear();
    for (const auto& f : rrf_fuse({l_bm25, l_dense}, config_.rrf_k)) {
      const auto d = *index_.find(f.doc_id);
      scores[d].rrf = f.score;
      final_order.push_back(d);
    }
    for (std::size_t r = pool_n; r < n; ++r) final_order.push_back(hybrid_order[r]);
  }

  std::vector<RetrievalScore> out;
  const std::size_t k = std::min(config_.top_k, n);
  for (std::size_t r = 0; r < k; ++r) {
    auto s = scores[final_order[r]];
    s.ranks["final"] = static_cast<int>(r + 1);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<RetrievalScore> retrieve_topk(const prompt::StructuredPrompt& prompt,
                                          const corpus::CorpusIndex& index,
                                          const Matrix& embeddings, const RetrieverConfig& config) {
  return HybridRetriever(index, embeddings, config).retrieve(prompt);
}

// ---------------------------------------------------------------------------

PolicyAdapterParams make_policy_adapter(std::size_t feature_dim, std::size_t hidden,
                                        std::size_t rank, std::uint64_t seed) {
  if (rank == 0 || rank > feature_dim) fail_usage("policy adapter: rank must lie in [1, feature_dim]");
  Rng rng(derive_seed(seed, 0x9011C7));
  PolicyAdapterParams p{Matrix(hidden, feature_dim), Matrix(rank, feature_dim),
                        Matrix(hidden, rank), Vec(hidden), true};
  fill_gaussian(p.w1, rng, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  fill_gaussian(p.a1, rng, 0.01);
  for (double& v : p.w2) v = rng.gaussian(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return p;
}

Vec policy_features(std::span<const double> prompt_embedding, std::span<const double> doc_embedding) {
  Vec f(prompt_embedding.begin(), prompt_embedding.end());
  f.insert(f.end(), doc_embedding.begin(), doc_embedding.end());
  return f;
}

namespace {

struct PolicyForward {
  Vec low;     // A1 f
  Vec hidden;  // tanh(z)
  double logit;
};

PolicyForward policy_forward(std::span<const double> f, const PolicyAdapterParams& p) {
  if (f.size() != p.feature_dim())
    fail_usage("policy adapter: feature dimension " + std::to_string(f.size()) + " != " +
               std::to_string(p.feature_dim()));
  PolicyForward out{Vec(p.rank()), Vec(p.w1.rows()), 0.0};
  for (std::size_t r = 0; r < p.rank(); ++r) out.low[r] = dot(p.a1.row(r), f);
  for (std::size_t h = 0; h < p.w1.rows(); ++h) {
    const double z = dot(p.w1.row(h), f) + dot(p.b1.row(h), out.low);
    out.hidden[h] = std::tanh(z);
    out.logit += p.w2[h] * out.hidden[h];
  }
  return out;
}

void accumulate_policy_grad(std::span<const double> f, const PolicyForward& fw, double dlogit,
                            const PolicyAdapterParams& p, PolicyGradients& g) {
  Vec dz(p.w1.rows());
  for (std::size_t h = 0; h < dz.size(); ++h)
    dz[h] = dlogit * p.w2[h] * (1.0 - fw.hidden[h] * fw.hidden[h]);
  Vec dlow(p.rank(), 0.0);
  for (std::size_t h = 0; h < dz.size(); ++h)
    for (std::size_t r = 0; r < p.rank(); ++r) {
      g.b1(h, r) += dz[h] * fw.low[r];
      dlow[r] += p.b1(h, r) * dz[h];
    }
  for (std::size_t r = 0; r < p.rank(); ++r)
    for (std::size_t c = 0; c < f.size(); ++c) g.a1(r, c) += dlow[r] * f[c];
}

}  // namespace

double policy_logit(std::span<const double> features, const PolicyAdapterParams& params) {
  return policy_forward(features, params).logit;
}

Vec policy_score(std::span<const double> prompt_feat, const std::vector<Vec>& doc_feats,
                 const PolicyAdapterParams& params) {
  if (doc_feats.empty()) fail_usage("policy_score: no documents");
  Vec logits;
  for (const auto& d : doc_feats) logits.push_back(policy_logit(policy_features(prompt_feat, d), params));
  return softmax(logits);
}

double policy_contrastive_loss(double sim_pos, std::span<const double> sim_negs) {
  if (sim_negs.empty()) fail_usage("policy_contrastive_loss: at least one negative required");
  const double top = std::max(sim_pos, *std::max_element(sim_negs.begin(), sim_negs.end()));
  if (top > sim_pos) {
    Vec all{sim_pos};
    all.insert(all.end(), sim_negs.begin(), sim_negs.end());
    return log_sum_exp(all) - sim_pos;
  }
  // log1p keeps precision once the positive dominates
  double rest = 0.0;
  for (double s : sim_negs) rest += std::exp(s - sim_pos);
  return std::log1p(rest);
}

double policy_loss_and_grad(const PolicyExample& ex, const PolicyAdapterParams& params,
                            PolicyGradients* grad) {
  std::vector<Vec> feats{policy_features(ex.prompt, ex.positive)};
  for (const auto& n : ex.negatives) feats.push_back(policy_features(ex.prompt, n));
  std::vector<PolicyForward> fw;
  Vec logits;
  for (const auto& f : feats) {
    fw.push_back(policy_forward(f, params));
    logits.push_back(fw.back().logit);
  }
  const double loss =
      policy_contrastive_loss(logits[0], std::span<const double>(logits).subspan(1));
  if (grad) {
    const Vec p = softmax(logits);
    for (std::size_t i = 0; i < feats.size(); ++i)
      accumulate_policy_grad(feats[i], fw[i], p[i] - (i == 0 ? 1.0 : 0.0), params, *grad);
  }
  return loss;
}

std::vector<double> train_policy(PolicyAdapterParams& params,
                                 const std::vector<PolicyExample>& examples, double lr,
                                 std::size_t steps) {
  if (params.frozen) fail_usage("train_policy: policy adapter is frozen");
  std::vector<double> curve;
  if (examples.empty()) return curve;
  for (std::size_t s = 0; s < steps; ++s) {
    PolicyGradients g{Matrix(params.a1.rows(), params.a1.cols()),
                      Matrix(params.b1.rows(), params.b1.cols())};
    double loss = 0.0;
    for (const auto& ex : examples) loss += policy_loss_and_grad(ex, params, &g);
    const double inv = 1.0 / static_cast<double>(examples.size());
    for (std::size_t i = 0; i < params.a1.size(); ++i) params.a1.data()[i] -= lr * inv * g.a1.data()[i];
    for (std::size_t i = 0; i < params.b1.size(); ++i) params.b1.data()[i] -= lr * inv * g.b1.data()[i];
    curve.push_back(loss * inv);
  }
  return curve;
}

}  // namespace autorag::retrieval
