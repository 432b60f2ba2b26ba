#include "doctest.h"

#include <cmath>
#include <numeric>

#include "autorag/error.hpp"
#include "autorag/model.hpp"

#include "support.hpp"

using namespace autorag;
using namespace autorag::lm;
using corpus::kBos;
using corpus::kEos;
using corpus::kSep;

namespace {

ModelConfig small_config(std::size_t d = 8, std::size_t heads = 2, std::size_t layers = 2) {
  ModelConfig c;
  c.vocab_size = 12;
  c.d_model = d;
  c.n_heads = heads;
  c.n_layers = layers;
  c.max_seq = 24;
  c.seed = 5;
  return c;
}

using Rows = std::vector<std::vector<double>>;

Rows rms(const Rows& x) {
  Rows out = x;
  for (auto& r : out) {
    double ms = 0.0;
    for (double v : r) ms += v * v;
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(r.size()) + 1e-6);
    for (double& v : r) v *= inv;
  }
  return out;
}

// y = x W^T
Rows times_t(const Rows& x, const Matrix& w) {
  Rows y(x.size(), std::vector<double>(w.rows(), 0.0));
  for (std::size_t t = 0; t < x.size(); ++t)
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) y[t][i] += w(i, j) * x[t][j];
  return y;
}

Rows add(Rows a, const Rows& b) {
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t j = 0; j < a[t].size(); ++j) a[t][j] += b[t][j];
  return a;
}

Rows scaled(Rows a, double s) {
  for (auto& r : a)
    for (double& v : r) v *= s;
  return a;
}

// Written from the architecture description, without the library kernels.
Rows naive_logits(const std::vector<TokenId>& tokens, const ToyTransformer& m,
                  const LoraAdapterStack* ad) {
  const auto& cfg = m.config();
  const std::size_t T = tokens.size(), d = cfg.d_model, dh = d / cfg.n_heads;
  Rows x(T, std::vector<double>(d));
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(j - j % 2) / static_cast<double>(d));
      const double pe = j % 2 ? std::cos(static_cast<double>(t) * freq) : std::sin(static_cast<double>(t) * freq);
      x[t][j] = m.token_embedding()(tokens[t], j) + pe;
    }
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = m.layers()[l];
    const Rows n = rms(x);
    Rows q = times_t(n, w.wq), k = times_t(n, w.wk), v = times_t(n, w.wv);
    if (ad) {
      const auto& tq = ad->target(l, TargetKind::query);
      const auto& tv = ad->target(l, TargetKind::value);
      q = add(q, scaled(times_t(times_t(n, tq.a), tq.b), ad->scale()));
      v = add(v, scaled(times_t(times_t(n, tv.a), tv.b), ad->scale()));
    }
    Rows o(T, std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < cfg.n_heads; ++h)
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<double> s(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t p = 0; p < dh; ++p) s[j] += q[i][h * dh + p] * k[j][h * dh + p];
          s[j] /= std::sqrt(static_cast<double>(dh));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t p = 0; p < dh; ++p) o[i][h * dh + p] += s[j] / z * v[j][h * dh + p];
      }
    x = add(x, times_t(o, w.wo));
    Rows u = times_t(rms(x), w.w1);
    for (auto& r : u)
      for (double& e : r)
        e = 0.5 * e * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (e + 0.044715 * e * e * e)));
    x = add(x, times_t(u, w.w2));
  }
  return times_t(rms(x), m.head());
}

void check_logits(const ForwardTrace& got, const Rows& want, std::size_t from, double tol) {
  REQUIRE(got.logits.rows() == want.size() - from);
  for (std::size_t r = 0; r < got.logits.rows(); ++r)
    for (std::size_t c = 0; c < got.logits.cols(); ++c)
      CHECK(std::abs(got.logits(r, c) - want[from + r][c]) < tol);
}

void randomize_b(LoraAdapterStack& ad, std::uint64_t seed) {
  for (std::size_t l = 0; l < ad.n_layers(); ++l)
    for (auto kind : {TargetKind::query, TargetKind::value}) {
      auto& t = ad.target(l, kind);
      t.b = testing::random_matrix(t.b.rows(), t.b.cols(), seed++, 0.3);
    }
}

}  // namespace

TEST_CASE("forward matches a naive oracle: one layer, one head, d=4") {
  const auto m = ToyTransformer::create(small_config(4, 1, 1));
  const std::vector<TokenId> tokens{kBos, 7};
  check_logits(forward(tokens, m, nullptr, false), naive_logits(tokens, m, nullptr), 0, 1e-6);
}

TEST_CASE("forward matches a naive oracle with adapters, several heads and layers") {
  const auto m = ToyTransformer::create(small_config(8, 2, 2));
  LoraConfig lc;
  lc.rank = 2;
  auto ad = create_adapters(m, lc, 3);
  randomize_b(ad, 40);
  const std::vector<TokenId> tokens{kBos, 5, 9, kSep, 6, 11, 2};
  check_logits(forward(tokens, m, &ad, true), naive_logits(tokens, m, &ad), 0, 1e-9);
  check_logits(forward(tokens, m, &ad, true, 4), naive_logits(tokens, m, &ad), 4, 1e-9);
  // active = false bypasses a nonzero B entirely
  check_logits(forward(tokens, m, &ad, false), naive_logits(tokens, m, nullptr), 0, 1e-9);
}

TEST_CASE("fresh adapters leave the forward pass bit-identical") {
  const auto m = ToyTransformer::create(small_config());
  const auto ad = create_adapters(m, LoraConfig{}, 1);
  const std::vector<TokenId> tokens{kBos, 6, 7, 8, kSep};
  const auto base = forward(tokens, m, nullptr, false);
  CHECK(forward(tokens, m, &ad, true).logits.values() == base.logits.values());
  CHECK(forward(tokens, m, &ad, false).logits.values() == base.logits.values());
}

TEST_CASE("attention rows are causal distributions") {
  const auto m = ToyTransformer::create(small_config());
  const std::vector<TokenId> tokens{kBos, 6, 7, 8, 9, kSep};
  const auto tr = forward(tokens, m, nullptr, false);
  REQUIRE(tr.attention.size() == 2);
  for (const auto& layer : tr.attention) {
    REQUIRE(layer.size() == 2);
    for (const auto& a : layer)
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < tokens.size(); ++j) {
          CHECK(a(i, j) >= 0.0);
          if (j > i) CHECK(a(i, j) == 0.0);
          sum += a(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      }
  }
}

TEST_CASE("model creation: determinism and errors") {
  const auto a = ToyTransformer::create(small_config());
  const auto b = ToyTransformer::create(small_config());
  CHECK(a.weight_hash() == b.weight_hash());
  CHECK(a.fingerprint() == b.fingerprint());
  auto other = small_config();
  other.seed = 6;
  CHECK(ToyTransformer::create(other).weight_hash() != a.weight_hash());

  auto bad = small_config();
  bad.n_heads = 3;
  CHECK_THROWS_AS(ToyTransformer::create(bad), Error);
  bad = small_config();
  bad.vocab_size = 0;
  CHECK_THROWS_AS(ToyTransformer::create(bad), Error);
}

TEST_CASE("forward errors carry their kind") {
  const auto m = ToyTransformer::create(small_config());
  auto kind_of = [&](std::vector<TokenId> t) {
    try {
      forward(t, m, nullptr, false);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::invariant;
  };
  CHECK(kind_of({}) == ErrorKind::usage);
  CHECK(kind_of(std::vector<TokenId>(25, 5)) == ErrorKind::data);
  CHECK_THROWS_AS(forward(std::vector<TokenId>{kBos, 12}, m, nullptr, false), Error);
  const std::vector<TokenId> two{kBos, 5};
  CHECK_THROWS_AS(forward(two, m, nullptr, false, 2), Error);
  LoraConfig lc;
  auto shallow = create_adapters(ToyTransformer::create(small_config(8, 2, 1)), lc, 1);
  CHECK_THROWS_AS(forward(two, m, &shallow, true), Error);
}

TEST_CASE("build_context layout") {
  const std::vector<TokenId> prompt{5, 6};
  const auto ctx = build_context(prompt, {{7}, {8, 9}});
  CHECK(ctx == std::vector<TokenId>{kBos, 5, 6, kSep, 7, kSep, 8, 9, kSep});
  CHECK(build_context(prompt, {}) == std::vector<TokenId>{kBos, 5, 6, kSep});
}

TEST_CASE("decode_greedy") {
  const auto m = ToyTransformer::create(small_config());
  const std::vector<TokenId> prompt{5, 6};
  const std::vector<std::vector<TokenId>> docs{{7, 8}};

  const auto none = decode_greedy(prompt, docs, m, nullptr, false, 0);
  CHECK(none.tokens.empty());
  CHECK(none.distributions.empty());
  CHECK(none.context.size() == 7);

  const auto r = decode_greedy(prompt, docs, m, nullptr, false, 8);
  const auto again = decode_greedy(prompt, docs, m, nullptr, false, 8);
  CHECK(r.tokens == again.tokens);
  REQUIRE(r.tokens.size() == r.distributions.size());
  CHECK((r.tokens.size() == 8 || r.tokens.back() == kEos));
  for (std::size_t t = 0; t < r.tokens.size(); ++t) {
    const auto& p = r.distributions[t].probs;
    CHECK(p.size() == 12);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    const auto best = static_cast<TokenId>(std::max_element(p.begin(), p.end()) - p.begin());
    CHECK(best == r.tokens[t]);
    if (t + 1 < r.tokens.size()) CHECK(r.tokens[t] != kEos);
  }

  // Each step's distribution equals a fresh forward over the growing sequence.
  std::vector<TokenId> seq = r.context;
  for (std::size_t t = 0; t < r.tokens.size(); ++t) {
    const auto logits = naive_logits(seq, m, nullptr).back();
    const auto p = softmax(logits);
    for (std::size_t v = 0; v < p.size(); ++v) CHECK(std::abs(p[v] - r.distributions[t].probs[v]) < 1e-9);
    seq.push_back(r.tokens[t]);
  }

  try {
    decode_greedy(prompt, docs, m, nullptr, false, 18);
    FAIL("expected overflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
  CHECK_NOTHROW(decode_greedy(prompt, docs, m, nullptr, false, 17));
}

TEST_CASE("teacher_forced reproduces decode distributions") {
  const auto m = ToyTransformer::create(small_config());
  LoraConfig lc;
  auto ad = create_adapters(m, lc, 2);
  randomize_b(ad, 9);
  const std::vector<TokenId> prompt{5, 6, 7};
  const auto r = decode_greedy(prompt, {{9}}, m, &ad, true, 6);
  const auto tf = teacher_forced(r.context, r.tokens, m, &ad, true);
  REQUIRE(tf.size() == r.tokens.size());
  for (std::size_t t = 0; t < tf.size(); ++t) {
    CHECK(tf[t].step == t);
    for (std::size_t v = 0; v < tf[t].probs.size(); ++v)
      CHECK(std::abs(tf[t].probs[v] - r.distributions[t].probs[v]) < 1e-12);
  }
  CHECK(teacher_forced(r.context, std::vector<TokenId>{}, m, nullptr, false).empty());
  const std::vector<TokenId> one{5};
  CHECK_THROWS_AS(teacher_forced(std::vector<TokenId>{}, one, m, nullptr, false), Error);
  CHECK_THROWS_AS(teacher_forced(r.context, std::vector<TokenId>(30, 5), m, nullptr, false), Error);
}

TEST_CASE("quantized base model") {
  const auto m = ToyTransformer::create(small_config());
  const auto q = m.quantized(4, 16);
  CHECK(q.config().quant_bits == 4);
  CHECK(q.weight_hash() != m.weight_hash());
  CHECK(q.fingerprint() != m.fingerprint());
  CHECK(q.token_embedding().values() == m.token_embedding().values());
  CHECK_FALSE(q.quantized_blocks().empty());
  CHECK(m.quantized(4, 16).weight_hash() == q.weight_hash());
  // the quantized copy still runs and stays near the base
  const std::vector<TokenId> tokens{kBos, 5, 6};
  const auto a = forward(tokens, m, nullptr, false).logits;
  const auto b = forward(tokens, q, nullptr, false).logits;
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::abs(a.data()[i] - b.data()[i]));
  CHECK(diff > 0.0);
  CHECK(diff < 2.0);
  CHECK_THROWS_AS(m.quantized(3, 16), Error);
}
