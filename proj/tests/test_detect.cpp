#include "doctest.h"

#include <cmath>
#include <numeric>

#include "autorag/detect.hpp"
#include "autorag/error.hpp"

#include "support.hpp"

using namespace autorag;
using namespace autorag::detect;
using corpus::kBos;
using corpus::kEos;
using corpus::kUnk;

namespace {

DetectionSample sample(Vec f, int label, prompt::Source src = prompt::Source::synthetic) {
  return {std::move(f), label, src};
}

std::vector<DetectionSample> separable(std::size_t per_class, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DetectionSample> out;
  for (std::size_t i = 0; i < per_class; ++i) {
    out.push_back(sample({1.0 + rng.uniform(), rng.uniform()}, 1));
    out.push_back(sample({-1.0 - rng.uniform(), rng.uniform()}, 0));
  }
  return out;
}

}  // namespace

TEST_CASE("sigmoid and predict") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(2.0) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(800.0) == 1.0);
  for (double z = -30; z <= 30; z += 0.5) CHECK(sigmoid(z) + sigmoid(-z) == doctest::Approx(1.0).epsilon(1e-15));

  // z = 0.5 - 2 + 0.75 - 0.25 = -1
  const ClassifierParams p{{0.5, -1.0, 0.25}, -0.25};
  CHECK(predict(Vec{1, 2, 3}, p) == doctest::Approx(1.0 / (1.0 + std::exp(1.0))).epsilon(1e-15));
  CHECK_THROWS_AS(predict(Vec{1, 2}, p), Error);
  CHECK(make_verdict(0.71, 0.7).flag);
  CHECK_FALSE(make_verdict(0.7, 0.7).flag);
}

TEST_CASE("pooled embedding, overlap and features") {
  const Matrix table(8, 2, std::vector<double>{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 2, 3, 4, 5, 6});
  // special ids 0..4 are skipped; UNK contributes nothing either
  const auto pooled = pooled_embedding(std::vector<TokenId>{kBos, 5, 6, kUnk, kEos}, table);
  CHECK(pooled == Vec{2, 3});
  CHECK(pooled_embedding(std::vector<TokenId>{kBos}, table) == Vec{0, 0});
  CHECK_THROWS_AS(pooled_embedding(std::vector<TokenId>{9}, table), Error);

  const std::vector<std::vector<TokenId>> docs{{5, 7}, {kUnk}};
  CHECK(unigram_precision(std::vector<TokenId>{5, 6, 7, kEos}, docs) == doctest::Approx(2.0 / 3.0));
  CHECK(unigram_precision(std::vector<TokenId>{kUnk, kEos}, docs) == 0.0);
  CHECK(unigram_precision(std::vector<TokenId>{6}, docs) == 0.0);

  const auto f = featurize(std::vector<TokenId>{6, kEos}, docs, table);
  CHECK(f == Vec{3, 4, 3, 4, 0});
  CHECK_THROWS_AS(featurize(std::vector<TokenId>{}, docs, table), Error);
  CHECK_THROWS_AS(featurize(std::vector<TokenId>{6}, {}, table), Error);
  CHECK_THROWS_AS(featurize(std::vector<TokenId>{6}, {{}}, table), Error);
}

TEST_CASE("overlap grows as generated tokens are copied from the documents") {
  Rng rng(4);
  const std::vector<std::vector<TokenId>> docs{{10, 11, 12, 13, 14, 15}};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenId> gen(8);
    for (auto& t : gen) t = static_cast<TokenId>(20 + rng.below(30));
    double prev = unigram_precision(gen, docs);
    CHECK(prev == 0.0);
    for (std::size_t i = 0; i < gen.size(); ++i) {
      gen[i] = static_cast<TokenId>(10 + rng.below(6));
      const double now = unigram_precision(gen, docs);
      CHECK(now >= prev);
      prev = now;
    }
    CHECK(prev == 1.0);
  }
}

TEST_CASE("bce_loss values and gradient") {
  const std::vector<DetectionSample> s{sample({1.0, -2.0}, 1), sample({0.5, 0.5}, 0)};
  const auto zero = ClassifierParams::zeros(2);
  CHECK(bce_loss(zero, s, nullptr) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  const ClassifierParams p{{0.3, -0.7}, 0.1};
  double want = 0.0;
  for (const auto& x : s) {
    const double q = 1.0 / (1.0 + std::exp(-(0.3 * x.features[0] - 0.7 * x.features[1] + 0.1)));
    want -= x.label ? std::log(q) : std::log(1 - q);
  }
  want /= 2.0;
  CHECK(bce_loss(p, s, nullptr) == doctest::Approx(want).epsilon(1e-12));
  CHECK(bce_loss(p, s, nullptr, 0.4) == doctest::Approx(want + 0.2 * (0.09 + 0.49)).epsilon(1e-12));

  auto g = ClassifierParams::zeros(2);
  bce_loss(p, s, &g, 0.4);
  const double h = 1e-6;
  for (std::size_t j = 0; j < 2; ++j) {
    auto up = p, dn = p;
    up.weights[j] += h;
    dn.weights[j] -= h;
    CHECK(g.weights[j] == doctest::Approx((bce_loss(up, s, nullptr, 0.4) - bce_loss(dn, s, nullptr, 0.4)) / (2 * h)).epsilon(1e-6));
  }
  auto up = p, dn = p;
  up.bias += h;
  dn.bias -= h;
  CHECK(g.bias == doctest::Approx((bce_loss(up, s, nullptr, 0.4) - bce_loss(dn, s, nullptr, 0.4)) / (2 * h)).epsilon(1e-6));

  const ClassifierParams huge{{1000.0, 0.0}, 0.0};
  CHECK(std::isfinite(bce_loss(huge, std::vector<DetectionSample>{sample({-1, 0}, 1)}, nullptr)));
  CHECK_THROWS_AS(bce_loss(p, std::vector<DetectionSample>{}, nullptr), Error);
}

TEST_CASE("make_dataset balances every batch") {
  auto samples = separable(10, 1);
  const auto ds = make_dataset(samples, 4);
  CHECK(ds.batches.size() == 5);
  CHECK(ds.composition.dropped == 0);
  CHECK(ds.composition.warnings.empty());
  for (const auto& b : ds.batches) {
    int pos = 0;
    for (auto i : b) pos += ds.samples[i].label;
    CHECK(b.size() == 4);
    CHECK(pos == 2);
  }

  // 10 positive, 7 negative, batch 4: three batches, 5 samples left over
  std::vector<DetectionSample> uneven;
  for (const auto& s : samples)
    if (s.label == 1 || uneven.size() < 14) uneven.push_back(s);
  std::size_t negs = 0;
  for (const auto& s : uneven) negs += s.label == 0;
  REQUIRE(negs == 7);
  const auto du = make_dataset(uneven, 4);
  CHECK(du.batches.size() == 3);
  CHECK(du.composition.dropped == 5);
  REQUIRE(du.composition.warnings.size() == 1);
  CHECK(du.composition.warnings[0].find("dropped 5") != std::string::npos);

  auto mixed = separable(4, 2);
  for (std::size_t i = 0; i < 4; ++i) mixed[i].source = prompt::Source::human_aligned;
  const auto dm = make_dataset(mixed, 8);
  CHECK(dm.composition.synthetic_fraction == 0.5);
  CHECK(dm.composition.human_aligned_fraction == 0.5);

  CHECK_THROWS_AS(make_dataset(samples, 3), Error);
  CHECK_THROWS_AS(make_dataset({}, 4), Error);
  std::vector<DetectionSample> one_class{sample({1, 1}, 1), sample({2, 1}, 1)};
  try {
    make_dataset(one_class, 2);
    FAIL("expected data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
  samples.push_back(sample({1, 2, 3}, 0));
  CHECK_THROWS_AS(make_dataset(samples, 4), Error);
}

TEST_CASE("train_classifier separates a separable set") {
  const auto ds = make_dataset(separable(20, 3), 4);
  const auto r = train_classifier(ds, {200, 0.5, 1, 0.0});
  CHECK(r.loss_curve.size() == 200);
  CHECK(r.loss_curve.back() < r.loss_curve.front());
  CHECK(r.loss_curve.front() < std::log(2.0));
  CHECK(accuracy(r.params, ds.samples) == 1.0);
  const auto again = train_classifier(ds, {200, 0.5, 1, 0.0});
  CHECK(again.params.weights == r.params.weights);

  const auto back = classifier_from_json(nlohmann::json::parse(classifier_to_json(r.params).dump()));
  CHECK(back.weights == r.params.weights);
  CHECK(back.bias == r.params.bias);
  auto j = classifier_to_json(r.params);
  j["feature_schema_version"] = 99;
  CHECK_THROWS_AS(classifier_from_json(j), Error);
  j = classifier_to_json(r.params);
  j["feature_dim"] = 7;
  CHECK_THROWS_AS(classifier_from_json(j), Error);
}

TEST_CASE("row and attention entropy") {
  CHECK(row_entropy(Vec{0.5, 0.25, 0.25}) == doctest::Approx(1.5 * std::log(2.0)).epsilon(1e-15));
  CHECK(row_entropy(Vec{0.5, 0.25, 0.25}) == doctest::Approx(1.0397).epsilon(1e-4));
  CHECK(row_entropy(Vec{0, 1, 0}) == 0.0);
  CHECK(row_entropy(Vec{0.25, 0.25, 0.25, 0.25}) == doctest::Approx(std::log(4.0)).epsilon(1e-15));

  lm::ForwardTrace tr;
  tr.logits_from = 1;
  // rows 1 and 2 count: entropies ln 2 and 0
  tr.attention = {{Matrix(3, 3, std::vector<double>{1, 0, 0, 0.5, 0.5, 0, 0, 0, 1})}};
  CHECK(attention_entropy(tr) == doctest::Approx(std::log(2.0) / 2).epsilon(1e-15));
  tr.attention[0][0](2, 2) = 0.9;
  CHECK_THROWS_AS(attention_entropy(tr), Error);
  tr.logits_from = 3;
  CHECK_THROWS_AS(attention_entropy(tr), Error);
}

TEST_CASE("semantic drift") {
  const DistributionSeq a{{{0.5, 0.5}, 0}, {{1.0, 0.0}, 1}};
  CHECK(semantic_drift(a, a).cosine == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(semantic_drift(a, a).jsd == 0.0);
  const DistributionSeq b{{{0.5, 0.5}, 0}, {{0.0, 1.0}, 1}};
  const auto d = semantic_drift(a, b);
  // second step: disjoint supports, cosine 0 and JSD ln 2
  CHECK(d.cosine == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d.jsd == doctest::Approx(std::log(2.0) / 2).epsilon(1e-12));
  CHECK(semantic_drift(b, a).jsd == doctest::Approx(d.jsd).epsilon(1e-15));
  CHECK_THROWS_AS(semantic_drift(a, DistributionSeq{a[0]}), Error);
  CHECK_THROWS_AS(semantic_drift({}, {}), Error);
}

TEST_CASE("integrated gradients: closed forms") {
  const Vec w{2.0, -1.0, 0.5};
  const ScoreFn linear = [&](std::span<const double> x, std::span<double> g) {
    for (std::size_t i = 0; i < 3; ++i) g[i] = w[i];
    return dot(x, w);
  };
  const Vec x{1.0, 4.0, -2.0}, base{0.5, 1.0, 0.0};
  const auto a = integrated_gradients(linear, x, base, 7);
  for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(w[i] * (x[i] - base[i])).epsilon(1e-14));

  // f = sum x^2 has a gradient linear along the path, so the midpoint rule is exact
  const ScoreFn square = [](std::span<const double> v, std::span<double> g) {
    double s = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      g[i] = 2 * v[i];
      s += v[i] * v[i];
    }
    return s;
  };
  const auto q = integrated_gradients(square, x, base, 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(q[i] == doctest::Approx(x[i] * x[i] - base[i] * base[i]).epsilon(1e-13));

  const auto same = integrated_gradients(square, x, x, 10);
  for (double v : same) CHECK(v == 0.0);
  CHECK_THROWS_AS(integrated_gradients(square, x, Vec{1.0}, 10), Error);
  CHECK_THROWS_AS(integrated_gradients(square, x, base, 0), Error);
}

TEST_CASE("lm token attributions satisfy completeness") {
  lm::ModelConfig mc;
  mc.vocab_size = 16;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.max_seq = 16;
  const auto model = lm::ToyTransformer::create(mc);
  const std::vector<TokenId> ctx{kBos, 6, 7, 4}, target{9, 10};
  const auto attr = lm_token_attributions(ctx, target, model, nullptr, false, 300);
  CHECK(attr.per_token.size() == 5);
  const double total = std::accumulate(attr.per_token.begin(), attr.per_token.end(), 0.0);
  const double gap = attr.score_input - attr.score_baseline;
  CHECK(std::abs(total - gap) < 1e-2 * std::max(1.0, std::abs(gap)));

  // score_input is the teacher-forced log-likelihood
  const auto tf = lm::teacher_forced(ctx, target, model, nullptr, false);
  CHECK(attr.score_input == doctest::Approx(std::log(tf[0].probs[9]) + std::log(tf[1].probs[10])).epsilon(1e-9));
  CHECK_THROWS_AS(lm_token_attributions(ctx, std::vector<TokenId>{}, model, nullptr, false), Error);
  CHECK_THROWS_AS(lm_token_attributions(ctx, std::vector<TokenId>{16}, model, nullptr, false), Error);
}
