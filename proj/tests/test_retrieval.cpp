#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "autorag/error.hpp"
#include "autorag/retrieval.hpp"

#include "support.hpp"

using namespace autorag;
using namespace autorag::retrieval;
using corpus::CorpusIndex;

namespace {

// Okapi BM25 from raw token lists, sharing nothing with the index.
double oracle_bm25(const std::vector<std::vector<std::string>>& docs, std::size_t d,
                   const std::vector<std::string>& query, double k1 = 1.2, double b = 0.75) {
  double avg = 0.0;
  for (const auto& doc : docs) avg += static_cast<double>(doc.size());
  avg /= static_cast<double>(docs.size());
  std::vector<std::string> terms = query;
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  double s = 0.0;
  for (const auto& t : terms) {
    double df = 0.0;
    for (const auto& doc : docs) df += std::count(doc.begin(), doc.end(), t) > 0 ? 1.0 : 0.0;
    const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), t));
    if (tf == 0.0) continue;
    const double n = static_cast<double>(docs.size());
    const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
    const double len = static_cast<double>(docs[d].size());
    s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
  }
  return s;
}

std::vector<corpus::TokenId> ids(const std::string& text, const CorpusIndex& index) {
  return corpus::tokenize(text, index.vocab());
}

}  // namespace

TEST_CASE("bm25_score: toy corpus against the oracle") {
  const std::vector<std::string> texts = {"apple banana apple", "banana cherry", "cherry cherry date fig"};
  std::vector<corpus::RawDocument> raw;
  std::vector<std::vector<std::string>> toks;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    raw.push_back({"d" + std::to_string(i), texts[i], ""});
    toks.push_back(corpus::split_words(texts[i]));
  }
  const auto index = CorpusIndex::build(raw, {});
  for (const char* q : {"apple", "banana", "cherry", "fig", "apple cherry", "banana banana date"}) {
    const auto qt = ids(q, index);
    const auto all = bm25_score_all(qt, index);
    for (std::uint32_t d = 0; d < 3; ++d) {
      const double expected = oracle_bm25(toks, d, corpus::split_words(q));
      CHECK(std::abs(bm25_score(qt, d, index) - expected) < 1e-9);
      CHECK(std::abs(bm25_score(qt, "d" + std::to_string(d), index) - expected) < 1e-9);
      CHECK(std::abs(all[d] - expected) < 1e-9);
    }
  }
  // Custom parameters reach the formula.
  const auto qt = ids("cherry", index);
  CHECK(std::abs(bm25_score(qt, 2u, index, {2.0, 0.3}) -
                 oracle_bm25(toks, 2, {"cherry"}, 2.0, 0.3)) < 1e-9);
  CHECK(bm25_score(ids("apple", index), 2u, index) == 0.0);
  CHECK(bm25_score(ids("zebra", index), 0u, index) == 0.0);
}

TEST_CASE("bm25_score: unknown documents are rejected") {
  const auto index = CorpusIndex::build({{"a", "x y", ""}}, {});
  CHECK_THROWS_AS(bm25_score(ids("x", index), "nope", index), Error);
  CHECK_THROWS_AS(bm25_score(ids("x", index), 5u, index), Error);
}

TEST_CASE("bm25_score: term frequency monotonicity") {
  std::string extra = "alpha beta gamma";
  double prev = -1.0;
  for (int reps = 0; reps < 6; ++reps) {
    const auto index = CorpusIndex::build(
        {{"a", extra, ""}, {"b", "beta delta", ""}, {"c", "epsilon zeta eta theta", ""}}, {});
    const double s = bm25_score(ids("alpha", index), "a", index);
    CHECK(s > prev);
    prev = s;
    extra = "alpha " + extra;
  }
  // IDF stays positive even for a term in every document.
  CHECK(bm25_idf(3, 3) > 0.0);
}

TEST_CASE("embed_text and dense_sim") {
  Matrix table(4, 3, std::vector<double>{0, 0, 0, 3, 4, 0, 0, 0, 2, 1, 1, 1});
  const std::vector<corpus::TokenId> one{1};
  const auto e = embed_text(one, table);
  CHECK(e[0] == doctest::Approx(0.6));
  CHECK(e[1] == doctest::Approx(0.8));
  CHECK(e[2] == 0.0);

  // mean of (3,4,0) and (0,0,2) is (1.5, 2, 1)
  const std::vector<corpus::TokenId> two{1, 2};
  const auto m = embed_text(two, table);
  const double n = std::sqrt(1.5 * 1.5 + 4.0 + 1.0);
  CHECK(m[0] == doctest::Approx(1.5 / n).epsilon(1e-12));
  CHECK(m[2] == doctest::Approx(1.0 / n).epsilon(1e-12));

  CHECK_THROWS_AS(embed_text(std::vector<corpus::TokenId>{}, table), Error);
  CHECK_THROWS_AS(embed_text(std::vector<corpus::TokenId>{0}, table), Error);  // zero row
  CHECK_THROWS_AS(embed_text(std::vector<corpus::TokenId>{9}, table), Error);

  CHECK(dense_sim(e, e) == doctest::Approx(1.0));
  const Vec x{1, 0, 0}, y{0, 1, 0};
  CHECK(dense_sim(x, y) == 0.0);
  CHECK_THROWS_AS(dense_sim(Vec{1, 1, 0}, y), Error);
  CHECK_THROWS_AS(dense_sim(Vec{1, 0}, y), Error);
}

TEST_CASE("embed_text: norm and order invariance on random tables") {
  const auto table = testing::random_matrix(50, 16, 4);
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<corpus::TokenId> toks;
    for (int i = 0; i < 1 + trial % 12; ++i) toks.push_back(static_cast<corpus::TokenId>(rng.below(50)));
    const auto a = embed_text(toks, table);
    CHECK(std::abs(l2_norm(a) - 1.0) < 1e-9);
    auto shuffled = toks;
    rng.shuffle(shuffled);
    const auto b = embed_text(shuffled, table);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);

    std::vector<corpus::TokenId> other{static_cast<corpus::TokenId>(rng.below(50))};
    const auto c = embed_text(other, table);
    CHECK(dense_sim(a, c) == dense_sim(c, a));
    CHECK(std::abs(dense_sim(a, c)) <= 1.0);
  }
}

TEST_CASE("hybrid_score") {
  CHECK(hybrid_score(1.0, 0.5, 0.6) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(hybrid_score(0.3, -0.9, 1.0) == 0.3);
  CHECK(hybrid_score(0.3, -0.9, 0.0) == -0.9);
  CHECK_THROWS_AS(hybrid_score(0.3, 0.1, 1.5), Error);
  CHECK_THROWS_AS(hybrid_score(0.3, 0.1, -0.1), Error);
  // Monotone in each component.
  for (double a : {0.0, 0.25, 0.6, 1.0})
    for (double s = 0.0; s < 1.0; s += 0.1) {
      CHECK(hybrid_score(s + 0.1, 0.2, a) >= hybrid_score(s, 0.2, a));
      CHECK(hybrid_score(0.4, s, a) <= hybrid_score(0.4, s + 0.1, a));
    }
}

TEST_CASE("rrf_fuse: formula values") {
  auto one = rrf_fuse({{"m", {"a", "b"}}}, 60);
  CHECK(one[0].doc_id == "a");
  CHECK(one[0].score == doctest::Approx(1.0 / 61).epsilon(1e-12));
  CHECK(one[0].score == doctest::Approx(0.016393).epsilon(1e-4));

  auto both = rrf_fuse({{"m1", {"a"}}, {"m2", {"a"}}}, 60);
  CHECK(both[0].score == doctest::Approx(2.0 / 61).epsilon(1e-12));

  // A at ranks (2,2) beats B at ranks (1,10).
  RankingList r1{"m1", {"b", "a", "c", "d", "e", "f", "g", "h", "i", "j"}};
  RankingList r2{"m2", {"x", "a", "c", "d", "e", "f", "g", "h", "i", "b"}};
  const auto fused = rrf_fuse({r1, r2}, 60);
  std::map<std::string, double> s;
  for (const auto& f : fused) s[f.doc_id] = f.score;
  CHECK(s["a"] == doctest::Approx(2.0 / 62).epsilon(1e-12));
  CHECK(s["b"] == doctest::Approx(1.0 / 61 + 1.0 / 70).epsilon(1e-12));
  CHECK(s["a"] > s["b"]);
  CHECK(fused[0].doc_id == "a");
  // "x" only appears in one ranking.
  CHECK(s["x"] == doctest::Approx(1.0 / 61).epsilon(1e-12));
}

TEST_CASE("rrf_fuse: ties, permutation invariance, errors") {
  const auto tie = rrf_fuse({{"m1", {"b", "a"}}, {"m2", {"a", "b"}}}, 60);
  CHECK(tie[0].doc_id == "a");
  CHECK(tie[1].doc_id == "b");

  Rng rng(3);
  std::vector<std::string> pool{"a", "b", "c", "d", "e", "f"};
  for (int t = 0; t < 30; ++t) {
    std::vector<RankingList> lists;
    for (int m = 0; m < 4; ++m) {
      auto p = pool;
      rng.shuffle(p);
      p.resize(2 + rng.below(4));
      lists.push_back({"m" + std::to_string(m), p});
    }
    const auto ref = rrf_fuse(lists, 10);
    auto perm = lists;
    rng.shuffle(perm);
    const auto got = rrf_fuse(perm, 10);
    REQUIRE(got.size() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(got[i].doc_id == ref[i].doc_id);
      CHECK(std::abs(got[i].score - ref[i].score) < 1e-15);
    }
  }
  CHECK_THROWS_AS(rrf_fuse({{"m", {"a"}}}, 0), Error);
  CHECK_THROWS_AS(rrf_fuse({}, 60), Error);
  CHECK_THROWS_AS(rrf_fuse({{"m", {"a", "a"}}}, 60), Error);
}

TEST_CASE("retriever: saturation and single document") {
  const auto index = CorpusIndex::build({{"only", "lonely doc", ""}}, {});
  const auto table = testing::random_matrix(index.vocab().size(), 8, 1);
  RetrieverConfig cfg;
  const auto r = retrieve_topk(prompt::rewrite_prompt("unrelated words?"), index, table, cfg);
  REQUIRE(r.size() == 1);
  CHECK(r[0].doc_id == "only");
  CHECK(r[0].ranks.at("final") == 1);

  const auto big = CorpusIndex::build(
      {{"a", "red fox", ""}, {"b", "blue fox", ""}, {"c", "green owl", ""}}, {});
  const auto t2 = testing::random_matrix(big.vocab().size(), 8, 2);
  cfg.top_k = 50;
  const auto all = retrieve_topk(prompt::rewrite_prompt("red fox?"), big, t2, cfg);
  CHECK(all.size() == 3);
  CHECK(all[0].doc_id == "a");
  CHECK_THROWS_AS(retrieve_topk(prompt::StructuredPrompt{"", " ", {}, {}}, big, t2, cfg), Error);
}

TEST_CASE("retriever: five-document fusion trace") {
  // BM25 prefers d1 (two query hits) while the embeddings favour d4.
  const auto index = CorpusIndex::build({{"d1", "q q x", ""},
                                         {"d2", "q y", ""},
                                         {"d3", "z w", ""},
                                         {"d4", "u", ""},
                                         {"d5", "v x", ""}},
                                        {});
  const auto& v = index.vocab();
  Matrix table(v.size(), 2, 0.0);
  auto set = [&](const char* w, double a, double b) {
    table(v.id(w), 0) = a;
    table(v.id(w), 1) = b;
  };
  set("q", 1, 0);
  set("x", -1, 1);
  set("y", 0, 1);
  set("z", 1, 1);
  set("w", 1, -1);
  set("u", 1, 0.1);
  set("v", 0.5, -1);

  RetrieverConfig cfg;
  cfg.alpha = 0.5;
  cfg.top_k = 5;
  cfg.pool_size = 4;
  HybridRetriever retriever(index, table, cfg);
  const std::vector<corpus::TokenId> query{v.id("q")};
  const auto got = retriever.retrieve_tokens(query);

  // Oracle: recompute every stage from the definitions.
  const std::vector<std::vector<std::string>> docs = {{"q", "q", "x"}, {"q", "y"}, {"z", "w"}, {"u"}, {"v", "x"}};
  const std::vector<std::pair<double, double>> emb_sum = {{1, 1}, {1, 1}, {2, 0}, {1, 0.1}, {-0.5, 0}};
  std::vector<double> bm(5), dn(5), hy(5);
  for (std::size_t d = 0; d < 5; ++d) {
    bm[d] = oracle_bm25(docs, d, {"q"});
    const auto [a, b] = emb_sum[d];
    dn[d] = a / std::hypot(a, b);  // query embedding is (1, 0)
  }
  const double lo = *std::min_element(bm.begin(), bm.end()), hi = *std::max_element(bm.begin(), bm.end());
  for (std::size_t d = 0; d < 5; ++d) hy[d] = 0.5 * (bm[d] - lo) / (hi - lo) + 0.5 * dn[d];
  std::vector<std::size_t> order(5);
  std::iota(order.begin(), order.end(), 0);
  auto by = [&](const std::vector<double>& s) {
    return [&s](std::size_t a, std::size_t b) { return s[a] != s[b] ? s[a] > s[b] : a < b; };
  };
  std::sort(order.begin(), order.end(), by(hy));
  std::vector<std::size_t> pool(order.begin(), order.begin() + 4);
  auto pb = pool, pd = pool;
  std::sort(pb.begin(), pb.end(), by(bm));
  std::sort(pd.begin(), pd.end(), by(dn));
  std::map<std::size_t, double> rrf;
  for (std::size_t r = 0; r < 4; ++r) {
    rrf[pb[r]] += 1.0 / (60.0 + r + 1);
    rrf[pd[r]] += 1.0 / (60.0 + r + 1);
  }
  std::vector<std::size_t> fused = pool;
  std::sort(fused.begin(), fused.end(), [&](std::size_t a, std::size_t b) {
    return rrf[a] != rrf[b] ? rrf[a] > rrf[b] : a < b;
  });
  fused.push_back(order[4]);

  CHECK(pb[0] == 0);  // the rankers disagree at the top
  CHECK(pd[0] != 0);
  REQUIRE(got.size() == 5);
  for (std::size_t r = 0; r < 5; ++r) {
    const auto d = fused[r];
    CHECK(got[r].doc_id == "d" + std::to_string(d + 1));
    CHECK(std::abs(got[r].bm25 - bm[d]) < 1e-9);
    CHECK(std::abs(got[r].dense - dn[d]) < 1e-9);
    CHECK(std::abs(got[r].hybrid - hy[d]) < 1e-9);
    CHECK(got[r].ranks.at("final") == static_cast<int>(r + 1));
    if (r < 4) CHECK(std::abs(got[r].rrf - rrf[d]) < 1e-12);
    else CHECK(got[r].rrf == 0.0);
  }

  cfg.rrf_enabled = false;
  const auto plain = HybridRetriever(index, table, cfg).retrieve_tokens(query);
  for (std::size_t r = 0; r < 5; ++r) CHECK(plain[r].doc_id == "d" + std::to_string(order[r] + 1));
}

TEST_CASE("policy_score") {
  const auto p = make_policy_adapter(4, 3, 2, 5);
  CHECK(p.frozen);
  const Vec prompt{0.5, 0.5};
  const auto same = policy_score(prompt, {Vec{1, 0}, Vec{1, 0}, Vec{1, 0}}, p);
  for (double x : same) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-12));
  const auto single = policy_score(prompt, {Vec{0.2, 0.9}}, p);
  CHECK(single[0] == doctest::Approx(1.0));
  CHECK_THROWS_AS(policy_score(prompt, {Vec{1, 0, 0}}, p), Error);
  CHECK_THROWS_AS(policy_score(prompt, {}, p), Error);
  CHECK_THROWS_AS(make_policy_adapter(4, 3, 5, 1), Error);

  // Hand-set weights: hidden 2, rank 1, features [prompt; doc] of size 2.
  PolicyAdapterParams h{Matrix(2, 2, std::vector<double>{1, 0, 0, 1}), Matrix(1, 2, std::vector<double>{1, 1}),
                        Matrix(2, 1, std::vector<double>{0.5, 0}), Vec{1, -1}, true};
  const Vec pr{1};
  // doc 0: f = (1, 0): low = 1, z = (1 + 0.5, 0), logit = tanh(1.5)
  // doc 1: f = (1, 2): low = 3, z = (1 + 1.5, 2), logit = tanh(2.5) - tanh(2)
  const double l0 = std::tanh(1.5), l1 = std::tanh(2.5) - std::tanh(2.0);
  const auto pi = policy_score(pr, {Vec{0}, Vec{2}}, h);
  CHECK(pi[0] == doctest::Approx(std::exp(l0) / (std::exp(l0) + std::exp(l1))).epsilon(1e-12));
  CHECK(pi[0] + pi[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("policy_score is a distribution and shift invariant") {
  auto p = make_policy_adapter(16, 6, 3, 8);
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto pr = testing::random_matrix(1, 8, 100 + t);
    std::vector<Vec> docs;
    for (int d = 0; d < 5; ++d) {
      const auto m = testing::random_matrix(1, 8, 200 + 10 * t + d);
      docs.emplace_back(m.row(0).begin(), m.row(0).end());
    }
    const Vec prompt(pr.row(0).begin(), pr.row(0).end());
    const auto pi = policy_score(prompt, docs, p);
    double s = 0.0;
    for (double x : pi) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
    // Softmax shift invariance: the same logits plus a constant.
    Vec logits;
    for (const auto& d : docs) logits.push_back(policy_logit(policy_features(prompt, d), p) + 3.7);
    const auto shifted = softmax(logits);
    for (std::size_t i = 0; i < pi.size(); ++i) CHECK(std::abs(shifted[i] - pi[i]) < 1e-12);
  }
}

TEST_CASE("policy_contrastive_loss") {
  CHECK(policy_contrastive_loss(0.3, Vec{0.3}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(policy_contrastive_loss(0.3, Vec{0.3}) == doctest::Approx(0.6931).epsilon(1e-4));
  const double e = std::exp(1.0);
  CHECK(policy_contrastive_loss(1.0, Vec{0, 0}) == doctest::Approx(-std::log(e / (e + 2))).epsilon(1e-12));
  CHECK(policy_contrastive_loss(1.0, Vec{0, 0}) == doctest::Approx(0.5514).epsilon(1e-4));
  double prev = 1e9;
  for (double pos = -5; pos <= 40; pos += 1.0) {
    const double l = policy_contrastive_loss(pos, Vec{0.0, 1.0});
    CHECK(l >= 0.0);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-15);
  CHECK(std::isfinite(policy_contrastive_loss(800.0, Vec{-800.0})));
  CHECK_THROWS_AS(policy_contrastive_loss(1.0, Vec{}), Error);
}

TEST_CASE("policy adapter gradient and training") {
  auto p = make_policy_adapter(8, 5, 2, 21);
  p.frozen = false;
  // Non-zero B so both factors receive gradient.
  Rng rng(4);
  fill_gaussian(p.b1, rng, 0.5);
  auto vec = [](std::uint64_t seed) {
    const auto m = testing::random_matrix(1, 4, seed);
    return Vec(m.row(0).begin(), m.row(0).end());
  };
  PolicyExample ex{vec(1), vec(2), {vec(3), vec(4)}};
  PolicyGradients g{Matrix(p.a1.rows(), p.a1.cols()), Matrix(p.b1.rows(), p.b1.cols())};
  policy_loss_and_grad(ex, p, &g);
  const double h = 1e-6;
  for (Matrix* m : {&p.a1, &p.b1}) {
    const Matrix& gm = m == &p.a1 ? g.a1 : g.b1;
    for (std::size_t i = 0; i < m->size(); ++i) {
      const double keep = m->data()[i];
      m->data()[i] = keep + h;
      const double up = policy_loss_and_grad(ex, p, nullptr);
      m->data()[i] = keep - h;
      const double down = policy_loss_and_grad(ex, p, nullptr);
      m->data()[i] = keep;
      CHECK(gm.data()[i] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1e-8));
    }
  }
  const auto curve = train_policy(p, {ex}, 0.5, 50);
  REQUIRE(curve.size() == 50);
  CHECK(curve.back() < curve.front());

  p.frozen = true;
  CHECK_THROWS_AS(train_policy(p, {ex}, 0.5, 1), Error);
}
