#include "autorag/feedback.hpp"

#include <cmath>

#include "autorag/error.hpp"

namespace autorag::feedback {

namespace {

// dKL(softmax(z) || q)/dz = p (log p - log q - KL), with q floored.
void add_kl_grad(std::span<const double> p, std::span<const double> q, double kl, double floor,
                 double weight, std::span<double> dz) {
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) dz[i] += weight * p[i] * (std::log(p[i]) - std::log(std::max(q[i], floor)) - kl);
}

std::vector<std::span<double>> param_spans(lm::LoraAdapterStack& s) {
  std::vector<std::span<double>> out;
  s.for_each_param([&](const std::string&, std::span<double> p) { out.push_back(p); });
  return out;
}

}  // namespace

nlohmann::json LossBreakdown::to_json() const {
  return {{"ce", ce},         {"kl", kl},           {"contrast", contrast},
          {"total", total},   {"lambda1", lambda1}, {"lambda2", lambda2},
          {"contrast_clamped", contrast_clamped}};
}

LossBreakdown LossBreakdown::from_json(const nlohmann::json& j) {
  LossBreakdown b;
  b.ce = j.at("ce").get<double>();
  b.kl = j.at("kl").get<double>();
  b.contrast = j.at("contrast").get<double>();
  b.total = j.at("total").get<double>();
  b.lambda1 = j.at("lambda1").get<double>();
  b.lambda2 = j.at("lambda2").get<double>();
  b.contrast_clamped = j.value("contrast_clamped", false);
  return b;
}

LossBreakdown total_loss(double ce, double kl, double contrast, double lambda1, double lambda2) {
  for (double v : {ce, kl, contrast, lambda1, lambda2})
    if (!std::isfinite(v)) fail_invariant("total_loss: non-finite component");
  LossBreakdown b;
  b.ce = ce;
  b.kl = kl;
  b.contrast = contrast;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.total = ce + lambda1 * kl + lambda2 * contrast;
  return b;
}

DistributionSeq reference_distribution(std::span<const TokenId> prompt,
                                       const std::vector<std::vector<TokenId>>& docs,
                                       const lm::ToyTransformer& model,
                                       std::span<const TokenId> target) {
  return lm::teacher_forced(lm::build_context(prompt, docs), target, model, nullptr, false);
}

double contrastive_kl(const DistributionSeq& plus, const DistributionSeq& minus,
                      const DistributionSeq& ret, double clamp, double floor) {
  if (plus.size() != ret.size() || minus.size() != ret.size())
    fail_usage("contrastive_kl: P+, P- and P_ret must have the same number of steps");
  const double v = sequence_kl(plus, ret, floor) - sequence_kl(minus, ret, floor);
  return std::clamp(v, -clamp, clamp);
}

std::vector<TokenId> align_to_length(std::span<const TokenId> tokens, std::size_t length) {
  std::vector<TokenId> out(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(
                                                              std::min(length, tokens.size())));
  out.resize(length, corpus::kEos);
  return out;
}

CorrectionBatch make_correction_batch(std::vector<TokenId> prompt,
                                      std::vector<std::vector<TokenId>> docs,
                                      std::vector<TokenId> target, std::span<const TokenId> negative,
                                      double p_hall, bool use_positive, bool use_negative,
                                      const lm::ToyTransformer& model) {
  if (target.empty()) fail_usage("correction batch: empty target");
  if (use_negative && negative.empty()) fail_usage("correction batch: P- requested without a negative");
  CorrectionBatch b;
  b.prompt = std::move(prompt);
  b.docs = std::move(docs);
  b.target = std::move(target);
  if (!negative.empty()) b.negative = align_to_length(negative, b.target.size());
  b.use_positive = use_positive;
  b.use_negative = use_negative;
  b.p_hall = p_hall;
  b.p_ret = reference_distribution(b.prompt, b.docs, model, b.target);
  return b;
}

LossBreakdown evaluate_loss(const CorrectionBatch& batch, const lm::ToyTransformer& model,
                            const lm::LoraAdapterStack& adapters, const LossConfig& config,
                            lm::LoraAdapterStack* grads) {
  const auto ctx = batch.context();
  const std::size_t n = batch.target.size();
  if (batch.p_ret.size() != n) fail_invariant("correction batch: P_ret is not aligned with the target");
  if (batch.use_negative && batch.negative.size() != n)
    fail_invariant("correction batch: P- is not aligned with the target");
  const double inv_n = 1.0 / static_cast<double>(n);

  auto run = [&](std::span<const TokenId> tgt) {
    std::vector<TokenId> seq = ctx;
    seq.insert(seq.end(), tgt.begin(), tgt.end() - 1);
    return lm::forward_cached(seq, model, &adapters, true, ctx.size() - 1);
  };

  const auto main = run(batch.target);
  std::vector<Vec> p(n);
  Vec kl_steps(n);
  double ce = 0.0, kl = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const auto row = main.trace.logits.row(t);
    p[t] = softmax(row);
    ce += (log_sum_exp(row) - row[batch.target[t]]) * inv_n;
    kl_steps[t] = kl_divergence(p[t], batch.p_ret[t].probs, config.kl_floor);
    kl += kl_steps[t] * inv_n;
  }

  std::optional<lm::ForwardCache> neg;
  std::vector<Vec> pn;
  Vec kln_steps;
  double kl_neg = 0.0;
  if (batch.use_negative) {
    neg = run(batch.negative);
    pn.resize(n);
    kln_steps.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      pn[t] = softmax(neg->trace.logits.row(t));
      kln_steps[t] = kl_divergence(pn[t], batch.p_ret[t].probs, config.kl_floor);
      kl_neg += kln_steps[t] * inv_n;
    }
  }
  const double raw = (batch.use_positive ? kl : 0.0) - (batch.use_negative ? kl_neg : 0.0);
  const double contrast = std::clamp(raw, -config.contrast_clamp, config.contrast_clamp);
  auto loss = total_loss(ce, kl, contrast, config.lambda1, config.lambda2);
  loss.contrast_clamped = contrast != raw;

  if (grads) {
    const double w_pos = config.lambda1 + (batch.use_positive && !loss.contrast_clamped ? config.lambda2 : 0.0);
    Matrix dz(n, main.trace.logits.cols());
    for (std::size_t t = 0; t < n; ++t) {
      auto row = dz.row(t);
      for (std::size_t i = 0; i < row.size(); ++i) row[i] = p[t][i] * inv_n;
      row[batch.target[t]] -= inv_n;
      add_kl_grad(p[t], batch.p_ret[t].probs, kl_steps[t], config.kl_floor, w_pos * inv_n, row);
    }
    lm::backward(main, dz, model, &adapters, grads, nullptr);
    if (neg && !loss.contrast_clamped) {
      Matrix dzn(n, neg->trace.logits.cols());
      for (std::size_t t = 0; t < n; ++t)
        add_kl_grad(pn[t], batch.p_ret[t].probs, kln_steps[t], config.kl_floor,
                    -config.lambda2 * inv_n, dzn.row(t));
      lm::backward(*neg, dzn, model, &adapters, grads, nullptr);
    }
  }
  return loss;
}

AdamState AdamState::for_adapters(const lm::LoraAdapterStack& adapters) {
  AdamState s;
  s.m = adapters.zeros_like();
  s.v = adapters.zeros_like();
  return s;
}

void adam_update(lm::LoraAdapterStack& params, const lm::LoraAdapterStack& grads, AdamState& state,
                 double lr) {
  auto ps = param_spans(params);
  std::vector<std::span<const double>> gs;
  grads.for_each_param([&](const std::string&, std::span<const double> g) { gs.push_back(g); });
  auto ms = param_spans(state.m);
  auto vs = param_spans(state.v);
  if (ps.size() != gs.size() || ps.size() != ms.size() || ps.size() != vs.size())
    fail_invariant("adam_update: parameter layout mismatch");
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    if (ps[k].size() != gs[k].size()) fail_invariant("adam_update: parameter shape mismatch");
    for (std::size_t i = 0; i < ps[k].size(); ++i) {
      const double g = gs[k][i];
      ms[k][i] = state.beta1 * ms[k][i] + (1.0 - state.beta1) * g;
      vs[k][i] = state.beta2 * vs[k][i] + (1.0 - state.beta2) * g * g;
      const double mh = ms[k][i] / c1, vh = vs[k][i] / c2;
      ps[k][i] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
  }
}

StepResult feedback_step(const CorrectionBatch& batch, const lm::ToyTransformer& model,
                         lm::LoraAdapterStack& adapters, AdamState& state, double lr,
                         const LossConfig& config) {
  StepResult r;
  if (!lm::adapter_gate(batch.p_hall, config.tau)) {
    r.skip_reason = "gate inactive: p_hall " + std::to_string(batch.p_hall) + " <= tau " +
                    std::to_string(config.tau);
    return r;
  }
  auto grads = adapters.zeros_like();
  r.loss = evaluate_loss(batch, model, adapters, config, &grads);
  double sq = 0.0;
  grads.for_each_param([&](const std::string&, std::span<const double> g) { sq += dot(g, g); });
  r.grad_norm = std::sqrt(sq);
  adam_update(adapters, grads, state, lr);
  r.applied = true;
  return r;
}

nlohmann::json adapters_to_json(const lm::LoraAdapterStack& adapters) {
  const auto& c = adapters.config();
  nlohmann::json j{{"rank", c.rank},
                   {"lora_alpha", c.lora_alpha},
                   {"scale_mode", lm::to_string(c.scale_mode)},
                   {"init_std", c.init_std},
                   {"dora", c.dora},
                   {"n_layers", adapters.n_layers()}};
  nlohmann::json targets = nlohmann::json::array();
  for (std::size_t l = 0; l < adapters.n_layers(); ++l)
    for (auto kind : {lm::TargetKind::query, lm::TargetKind::value}) {
      const auto& t = adapters.target(l, kind);
      targets.push_back({{"name", lm::LoraAdapterStack::target_name(l, kind)},
                         {"a", lm::matrix_to_json(t.a)},
                         {"b", lm::matrix_to_json(t.b)},
                         {"magnitude", t.magnitude}});
    }
  j["targets"] = std::move(targets);
  return j;
}

lm::LoraAdapterStack adapters_from_json(const nlohmann::json& j) {
  lm::LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.lora_alpha = j.at("lora_alpha").get<double>();
  c.scale_mode = lm::parse_scale_mode(j.at("scale_mode").get<std::string>());
  c.init_std = j.at("init_std").get<double>();
  c.dora = j.at("dora").get<bool>();
  lm::LoraAdapterStack s(j.at("n_layers").get<std::size_t>(), c);
  const auto& targets = j.at("targets");
  if (targets.size() != 2 * s.n_layers()) fail_data("adapter checkpoint: wrong number of targets");
  std::size_t k = 0;
  for (std::size_t l = 0; l < s.n_layers(); ++l)
    for (auto kind : {lm::TargetKind::query, lm::TargetKind::value}) {
      const auto& tj = targets.at(k++);
      if (tj.at("name").get<std::string>() != lm::LoraAdapterStack::target_name(l, kind))
        fail_data("adapter checkpoint: unexpected target order");
      auto& t = s.target(l, kind);
      t.a = lm::matrix_from_json(tj.at("a"));
      t.b = lm::matrix_from_json(tj.at("b"));
      t.magnitude = tj.at("magnitude").get<Vec>();
      if (t.a.rows() != c.rank || t.b.cols() != c.rank)
        fail_data("adapter checkpoint: factor shapes do not match rank");
    }
  return s;
}

nlohmann::json AdamState::to_json() const {
  return {{"beta1", beta1}, {"beta2", beta2}, {"eps", eps}, {"t", t},
          {"m", adapters_to_json(m)}, {"v", adapters_to_json(v)}};
}

AdamState AdamState::from_json(const nlohmann::json& j, const lm::LoraAdapterStack& shape) {
  AdamState s;
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  s.t = j.at("t").get<std::uint64_t>();
  s.m = adapters_from_json(j.at("m"));
  s.v = adapters_from_json(j.at("v"));
  if (s.m.parameter_count() != shape.parameter_count() || s.v.parameter_count() != shape.parameter_count())
    fail_data("optimizer checkpoint: moment shapes do not match the adapters");
  return s;
}

}  // namespace autorag::feedback
