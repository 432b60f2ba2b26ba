#include "autorag/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "autorag/error.hpp"
#include "autorag/kernels.hpp"
#include "autorag/util.hpp"

namespace autorag::lm {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)

void rms_forward(const Matrix& x, Matrix& n, Vec& inv) {
  n = Matrix(x.rows(), x.cols());
  inv.assign(x.rows(), 0.0);
  const double d = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    inv[i] = 1.0 / std::sqrt(dot(r, r) / d + kRmsEps);
    for (std::size_t j = 0; j < x.cols(); ++j) n(i, j) = r[j] * inv[i];
  }
}

Matrix rms_backward(const Matrix& x, const Vec& inv, const Matrix& dn) {
  Matrix dx(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double r = inv[i];
    const double proj = dot(dn.row(i), x.row(i)) * r * r * r / d;
    for (std::size_t j = 0; j < x.cols(); ++j) dx(i, j) = r * dn(i, j) - x(i, j) * proj;
  }
  return dx;
}

double gelu(double u) { return 0.5 * u * (1.0 + std::tanh(kGeluC * (u + 0.044715 * u * u * u))); }

double gelu_grad(double u) {
  const double t = std::tanh(kGeluC * (u + 0.044715 * u * u * u));
  return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * 0.044715 * u * u);
}

// Y = N W_eff^T for one adapted projection.
Matrix project(const Matrix& n, const Matrix& w, const LoraTarget* t, double scale, bool on,
               Matrix& low, Matrix& w_eff) {
  if (!on || t == nullptr) return kernels::matmul_nt(n, w);
  if (t->dora()) {
    w_eff = dora_compose(w, t->a, t->b, t->magnitude, scale);
    return kernels::matmul_nt(n, w_eff);
  }
  Matrix y = kernels::matmul_nt(n, w);
  low = kernels::matmul_nt(n, t->a);
  const Matrix delta = kernels::matmul_nt(low, t->b);
  auto yf = y.flat();
  const auto df = delta.flat();
  for (std::size_t i = 0; i < yf.size(); ++i) yf[i] += scale * df[i];
  return y;
}

void project_backward(const Matrix& dy, const Matrix& n, const Matrix& w, const LoraTarget* t,
                      LoraTarget* g, double scale, bool on, const Matrix& low,
                      const Matrix& w_eff, Matrix& dn) {
  if (!on || t == nullptr) {
    dn += kernels::matmul_nn(dy, w);
    return;
  }
  if (t->dora()) {
    dn += kernels::matmul_nn(dy, w_eff);
    if (!g) return;
    const Matrix dweff = kernels::matmul_tn(dy, n);  // d x k
    Matrix m = w;
    const Matrix ba = kernels::matmul_nn(t->b, t->a);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] += scale * ba.data()[i];
    const Vec norms = column_norms(m);
    Matrix dm(m.rows(), m.cols());
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double proj = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) proj += dweff(i, j) * m(i, j) / norms[j];
      g->magnitude[j] += proj;
      const double f = t->magnitude[j] / norms[j];
      for (std::size_t i = 0; i < m.rows(); ++i)
        dm(i, j) = f * (dweff(i, j) - (m(i, j) / norms[j]) * proj);
    }
    const Matrix db = kernels::matmul_nt(dm, t->a);  // d x r
    const Matrix da = kernels::matmul_tn(t->b, dm);  // r x k
    for (std::size_t i = 0; i < db.size(); ++i) g->b.data()[i] += scale * db.data()[i];
    for (std::size_t i = 0; i < da.size(); ++i) g->a.data()[i] += scale * da.data()[i];
    return;
  }
  Matrix dn_local = kernels::matmul_nn(dy, w);
  const Matrix gb = kernels::matmul_nn(dy, t->b);  // T x r
  const Matrix via_a = kernels::matmul_nn(gb, t->a);
  for (std::size_t i = 0; i < dn_local.size(); ++i) dn_local.data()[i] += scale * via_a.data()[i];
  dn += dn_local;
  if (!g) return;
  const Matrix db = kernels::matmul_tn(dy, low);  // d x r
  const Matrix da = kernels::matmul_tn(gb, n);    // r x k
  for (std::size_t i = 0; i < db.size(); ++i) g->b.data()[i] += scale * db.data()[i];
  for (std::size_t i = 0; i < da.size(); ++i) g->a.data()[i] += scale * da.data()[i];
}

Matrix sinusoidal_positions(std::size_t max_seq, std::size_t d) {
  Matrix p(max_seq, d);
  for (std::size_t pos = 0; pos < max_seq; ++pos)
    for (std::size_t i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      p(pos, i) = (i % 2 == 0) ? std::sin(static_cast<double>(pos) * rate)
                               : std::cos(static_cast<double>(pos) * rate);
    }
  return p;
}

void hash_matrix(Fnv1a& h, const Matrix& m) {
  h.update(static_cast<std::uint64_t>(m.rows()));
  h.update(static_cast<std::uint64_t>(m.cols()));
  h.update(m.flat());
}

}  // namespace

std::string ModelConfig::describe() const {
  std::ostringstream s;
  s << "V=" << vocab_size << ";d=" << d_model << ";h=" << n_heads << ";L=" << n_layers
    << ";ff=" << ff_dim() << ";T=" << max_seq << ";seed=" << seed << ";qbits=" << quant_bits
    << ";qblock=" << (quant_bits ? quant_block : 0);
  return s.str();
}

ToyTransformer ToyTransformer::create(const ModelConfig& config) {
  if (config.vocab_size == 0 || config.d_model == 0 || config.n_heads == 0 || config.n_layers == 0 ||
      config.max_seq == 0)
    fail_usage("model: all dimensions must be positive");
  if (config.d_model % config.n_heads != 0) fail_usage("model: d_model must be divisible by n_heads");
  ToyTransformer m;
  m.config_ = config;
  m.config_.quant_bits = 0;
  Rng rng(derive_seed(config.seed, 0x70F));
  const double d = static_cast<double>(config.d_model);
  const std::size_t ff = config.ff_dim();
  m.tok_emb_ = Matrix(config.vocab_size, config.d_model);
  fill_gaussian(m.tok_emb_, rng, 1.0);
  m.pos_ = sinusoidal_positions(config.max_seq, config.d_model);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights lw{Matrix(config.d_model, config.d_model), Matrix(config.d_model, config.d_model),
                    Matrix(config.d_model, config.d_model), Matrix(config.d_model, config.d_model),
                    Matrix(ff, config.d_model), Matrix(config.d_model, ff)};
    for (Matrix* w : {&lw.wq, &lw.wk, &lw.wv, &lw.wo, &lw.w1}) fill_gaussian(*w, rng, 1.0 / std::sqrt(d));
    fill_gaussian(lw.w2, rng, 1.0 / std::sqrt(static_cast<double>(ff)));
    m.layers_.push_back(std::move(lw));
  }
  m.head_ = Matrix(config.vocab_size, config.d_model);
  fill_gaussian(m.head_, rng, 1.0 / std::sqrt(d));
  m.source_hash_ = m.weight_hash();
  return m;
}

std::string ToyTransformer::weight_hash() const {
  Fnv1a h;
  hash_matrix(h, tok_emb_);
  hash_matrix(h, pos_);
  for (const auto& l : layers_)
    for (const Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) hash_matrix(h, *w);
  hash_matrix(h, head_);
  return h.hex();
}

std::string ToyTransformer::fingerprint() const {
  Fnv1a h;
  h.update(config_.describe());
  h.update(source_hash_);
  return h.hex();
}

ToyTransformer ToyTransformer::quantized(int bits, std::size_t block_size) const {
  if (config_.quant_bits != 0) fail_usage("model: base is already quantized");
  ToyTransformer q = *this;
  q.config_.quant_bits = bits;
  q.config_.quant_block = block_size;
  q.quantized_.clear();
  auto quant = [&](Matrix& w) {
    auto r = quantize_roundtrip(w, bits, block_size);
    w = std::move(r.dequantized);
    q.quantized_.push_back(std::move(r.quantized));
  };
  for (auto& l : q.layers_)
    for (Matrix* w : {&l.wq, &l.wk, &l.wv, &l.wo, &l.w1, &l.w2}) quant(*w);
  quant(q.head_);
  return q;
}

LoraAdapterStack create_adapters(const ToyTransformer& model, const LoraConfig& config,
                                 std::uint64_t seed) {
  const std::size_t d = model.config().d_model;
  if (config.rank == 0 || config.rank > d) fail_usage("LoRA rank must lie in [1, d_model]");
  if (config.dora && model.config().quant_bits != 0)
    fail_usage("DoRA and QLoRA are mutually exclusive on the same target matrices");
  LoraAdapterStack s(model.config().n_layers, config);
  Rng rng(derive_seed(seed, 0x10AA));
  for (std::size_t l = 0; l < s.n_layers(); ++l)
    for (auto kind : {TargetKind::query, TargetKind::value}) {
      auto& t = s.target(l, kind);
      t.a = Matrix(config.rank, d);
      fill_gaussian(t.a, rng, config.init_std);
      t.b = Matrix(d, config.rank);
      if (config.dora) {
        const auto& w = kind == TargetKind::query ? model.layers()[l].wq : model.layers()[l].wv;
        t.magnitude = column_norms(w);
      }
    }
  return s;
}

void check_tokens(std::span<const TokenId> tokens, const ToyTransformer& model) {
  if (tokens.empty()) fail_usage("forward: empty token sequence");
  if (tokens.size() > model.config().max_seq)
    fail_data("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
              std::to_string(model.config().max_seq));
  for (TokenId t : tokens)
    if (t >= model.config().vocab_size)
      fail_usage("forward: token id " + std::to_string(t) + " out of range (V=" +
                 std::to_string(model.config().vocab_size) + ")");
}

ForwardCache forward_embedded(const Matrix& token_rows, const ToyTransformer& model,
                              const LoraAdapterStack* adapters, bool active,
                              std::size_t logits_from) {
  const auto& cfg = model.config();
  const std::size_t T = token_rows.rows(), d = cfg.d_model, H = cfg.n_heads, dh = d / H;
  if (T == 0 || T > cfg.max_seq) fail_data("forward: sequence length out of range");
  if (token_rows.cols() != d) fail_usage("forward: embedding width mismatch");
  if (logits_from >= T) fail_usage("forward: logits_from beyond sequence");
  if (adapters && adapters->n_layers() != cfg.n_layers)
    fail_usage("forward: adapter stack does not match model depth");

  const bool on = active && adapters != nullptr;
  const double scale = adapters ? adapters->scale() : 0.0;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardCache c;
  c.adapters_on = on;
  c.trace.logits_from = logits_from;
  Matrix x = token_rows;
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) += model.positional()(i, j);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& lw = model.layers()[l];
    ForwardCache::Layer L;
    L.x_in = x;
    rms_forward(x, L.n1, L.inv1);
    const LoraTarget* tq = adapters ? &adapters->target(l, TargetKind::query) : nullptr;
    const LoraTarget* tv = adapters ? &adapters->target(l, TargetKind::value) : nullptr;
    L.q = project(L.n1, lw.wq, tq, scale, on, L.q_low, L.wq_eff);
    L.k = kernels::matmul_nt(L.n1, lw.wk);
    L.v = project(L.n1, lw.wv, tv, scale, on, L.v_low, L.wv_eff);

    L.o = Matrix(T, d);
    std::vector<Matrix> heads;
    for (std::size_t h = 0; h < H; ++h) {
      Matrix a(T, T);
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += L.q(i, off + p) * L.k(j, off + p);
          a(i, j) = s * inv_sqrt_dh;
          mx = std::max(mx, a(i, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          a(i, j) = std::exp(a(i, j) - mx);
          z += a(i, j);
        }
        for (std::size_t j = 0; j <= i; ++j) a(i, j) /= z;
        for (std::size_t p = 0; p < dh; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j <= i; ++j) s += a(i, j) * L.v(j, off + p);
          L.o(i, off + p) = s;
        }
      }
      heads.push_back(std::move(a));
    }
    c.trace.attention.push_back(std::move(heads));

    L.x_mid = L.x_in;
    L.x_mid += kernels::matmul_nt(L.o, lw.wo);
    rms_forward(L.x_mid, L.n2, L.inv2);
    L.u = kernels::matmul_nt(L.n2, lw.w1);
    L.g = L.u;
    for (double& v : L.g.flat()) v = gelu(v);
    x = L.x_mid;
    x += kernels::matmul_nt(L.g, lw.w2);
    c.layers.push_back(std::move(L));
  }
  c.x_final = x;
  rms_forward(x, c.n_final, c.inv_final);
  Matrix tail(T - logits_from, d);
  for (std::size_t i = logits_from; i < T; ++i)
    std::copy(c.n_final.row(i).begin(), c.n_final.row(i).end(), tail.row(i - logits_from).begin());
  c.trace.logits = kernels::matmul_nt(tail, model.head());
  return c;
}

ForwardCache forward_cached(std::span<const TokenId> tokens, const ToyTransformer& model,
                            const LoraAdapterStack* adapters, bool active,
                            std::size_t logits_from) {
  check_tokens(tokens, model);
  Matrix rows(tokens.size(), model.config().d_model);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto src = model.token_embedding().row(tokens[i]);
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  return forward_embedded(rows, model, adapters, active, logits_from);
}

ForwardTrace forward(std::span<const TokenId> tokens, const ToyTransformer& model,
                     const LoraAdapterStack* adapters, bool active, std::size_t logits_from) {
  return std::move(forward_cached(tokens, model, adapters, active, logits_from).trace);
}

void backward(const ForwardCache& c, const Matrix& dlogits, const ToyTransformer& model,
              const LoraAdapterStack* adapters, LoraAdapterStack* grads, Matrix* d_token_rows) {
  const auto& cfg = model.config();
  const std::size_t T = c.x_final.rows(), d = cfg.d_model, H = cfg.n_heads, dh = d / H;
  if (!dlogits.same_shape(c.trace.logits)) fail_usage("backward: dlogits shape mismatch");
  const bool on = c.adapters_on;
  const double scale = adapters ? adapters->scale() : 0.0;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix dnf(T, d);
  const Matrix dtail = kernels::matmul_nn(dlogits, model.head());
  for (std::size_t i = 0; i < dtail.rows(); ++i)
    std::copy(dtail.row(i).begin(), dtail.row(i).end(), dnf.row(c.trace.logits_from + i).begin());
  Matrix dx = rms_backward(c.x_final, c.inv_final, dnf);

  for (std::size_t li = cfg.n_layers; li-- > 0;) {
    const auto& L = c.layers[li];
    const auto& lw = model.layers()[li];

    Matrix du = kernels::matmul_nn(dx, lw.w2);
    for (std::size_t i = 0; i < du.size(); ++i) du.data()[i] *= gelu_grad(L.u.data()[i]);
    const Matrix dn2 = kernels::matmul_nn(du, lw.w1);
    Matrix dmid = dx;
    dmid += rms_backward(L.x_mid, L.inv2, dn2);

    const Matrix d_o = kernels::matmul_nn(dmid, lw.wo);
    Matrix dq(T, d), dk(T, d), dv(T, d);
    for (std::size_t h = 0; h < H; ++h) {
      const Matrix& a = c.trace.attention[li][h];
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        // dA_ij = dO_i . V_j ; dS = A * (dA - sum_j A dA)
        Vec da(i + 1);
        double row_dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0.0;
          for (std::size_t p = 0; p < dh; ++p) s += d_o(i, off + p) * L.v(j, off + p);
          da[j] = s;
          row_dot += a(i, j) * s;
        }
        for (std::size_t j = 0; j <= i; ++j) {
          const double ds = a(i, j) * (da[j] - row_dot) * inv_sqrt_dh;
          for (std::size_t p = 0; p < dh; ++p) {
            dq(i, off + p) += ds * L.k(j, off + p);
            dk(j, off + p) += ds * L.q(i, off + p);
            dv(j, off + p) += a(i, j) * d_o(i, off + p);
          }
        }
      }
    }

    Matrix dn1 = kernels::matmul_nn(dk, lw.wk);
    const LoraTarget* tq = adapters ? &adapters->target(li, TargetKind::query) : nullptr;
    const LoraTarget* tv = adapters ? &adapters->target(li, TargetKind::value) : nullptr;
    LoraTarget* gq = (grads && on) ? &grads->target(li, TargetKind::query) : nullptr;
    LoraTarget* gv = (grads && on) ? &grads->target(li, TargetKind::value) : nullptr;
    project_backward(dq, L.n1, lw.wq, tq, gq, scale, on, L.q_low, L.wq_eff, dn1);
    project_backward(dv, L.n1, lw.wv, tv, gv, scale, on, L.v_low, L.wv_eff, dn1);

    dx = dmid;
    dx += rms_backward(L.x_in, L.inv1, dn1);
  }
  if (d_token_rows) *d_token_rows = std::move(dx);
}

std::vector<TokenId> build_context(std::span<const TokenId> prompt,
                                   const std::vector<std::vector<TokenId>>& docs) {
  std::vector<TokenId> ctx{corpus::kBos};
  ctx.insert(ctx.end(), prompt.begin(), prompt.end());
  ctx.push_back(corpus::kSep);
  for (const auto& d : docs) {
    ctx.insert(ctx.end(), d.begin(), d.end());
    ctx.push_back(corpus::kSep);
  }
  return ctx;
}

DecodeResult decode_greedy(std::span<const TokenId> prompt,
                           const std::vector<std::vector<TokenId>>& docs,
                           const ToyTransformer& model, const LoraAdapterStack* adapters,
                           bool active, std::size_t max_len) {
  DecodeResult out;
  out.context = build_context(prompt, docs);
  const std::size_t limit = model.config().max_seq;
  if (out.context.size() + max_len > limit)
    fail_data("decode: context of " + std::to_string(out.context.size()) + " tokens plus max_len " +
              std::to_string(max_len) + " exceeds max_seq " + std::to_string(limit));
  check_tokens(out.context, model);
  std::vector<TokenId> seq = out.context;
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto trace = forward(seq, model, adapters, active, seq.size() - 1);
    TokenDistribution dist{softmax(trace.logits.row(0)), step};
    const auto best = static_cast<TokenId>(
        std::max_element(dist.probs.begin(), dist.probs.end()) - dist.probs.begin());
    out.distributions.push_back(std::move(dist));
    out.tokens.push_back(best);
    seq.push_back(best);
    if (best == corpus::kEos) break;
  }
  const std::size_t from = out.context.size() - 1;
  out.trace = forward(seq, model, adapters, active, std::min(from, seq.size() - 1));
  return out;
}

DistributionSeq teacher_forced(std::span<const TokenId> context, std::span<const TokenId> target,
                               const ToyTransformer& model, const LoraAdapterStack* adapters,
                               bool active) {
  DistributionSeq out;
  if (target.empty()) return out;
  if (context.empty()) fail_usage("teacher_forced: empty context");
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  if (seq.size() > model.config().max_seq)
    fail_data("teacher_forced: sequence of " + std::to_string(seq.size()) + " tokens exceeds max_seq " +
              std::to_string(model.config().max_seq));
  const auto trace = forward(seq, model, adapters, active, context.size() - 1);
  for (std::size_t t = 0; t < target.size(); ++t)
    out.push_back({softmax(trace.logits.row(t)), t});
  return out;
}

}  // namespace autorag::lm
