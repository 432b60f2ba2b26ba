#include "autorag/detect.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "autorag/divergence.hpp"
#include "autorag/error.hpp"
#include "autorag/util.hpp"

namespace autorag::detect {

Vec pooled_embedding(std::span<const TokenId> tokens, const Matrix& table) {
  Vec out(table.cols(), 0.0);
  std::size_t n = 0;
  for (TokenId t : tokens) {
    if (corpus::Vocabulary::is_special(t)) continue;
    if (t >= table.rows()) fail_usage("pooled_embedding: token id out of range");
    const auto r = table.row(t);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
    ++n;
  }
  if (n > 0)
    for (double& v : out) v /= static_cast<double>(n);
  return out;
}

double unigram_precision(std::span<const TokenId> gen, const std::vector<std::vector<TokenId>>& docs) {
  std::unordered_set<TokenId> seen;
  for (const auto& d : docs) seen.insert(d.begin(), d.end());
  std::size_t total = 0, hit = 0;
  for (TokenId t : gen) {
    if (corpus::Vocabulary::is_special(t)) continue;
    ++total;
    if (seen.contains(t)) ++hit;
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

Vec featurize(std::span<const TokenId> gen, const std::vector<std::vector<TokenId>>& docs,
              const Matrix& table) {
  if (gen.empty()) fail_usage("classify: empty generation");
  if (docs.empty()) fail_usage("classify: empty document set");
  std::vector<TokenId> joined;
  for (const auto& d : docs) joined.insert(joined.end(), d.begin(), d.end());
  if (joined.empty()) fail_usage("classify: documents contain no tokens");
  Vec f = pooled_embedding(gen, table);
  const Vec pd = pooled_embedding(joined, table);
  f.insert(f.end(), pd.begin(), pd.end());
  f.push_back(unigram_precision(gen, docs));
  return f;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double predict(std::span<const double> features, const ClassifierParams& params) {
  if (features.size() != params.feature_dim())
    fail_usage("classifier: feature dimension " + std::to_string(features.size()) +
               " does not match parameters (" + std::to_string(params.feature_dim()) + ")");
  return sigmoid(dot(features, params.weights) + params.bias);
}

HallucinationVerdict classify(std::span<const TokenId> gen,
                              const std::vector<std::vector<TokenId>>& docs, const Matrix& table,
                              const ClassifierParams& params, double tau) {
  return make_verdict(predict(featurize(gen, docs, table), params), tau);
}

nlohmann::json DatasetComposition::to_json() const {
  return {{"batch_size", batch_size},
          {"batches", batches},
          {"grounded", grounded},
          {"hallucinated", hallucinated},
          {"dropped", dropped},
          {"synthetic_fraction", synthetic_fraction},
          {"human_aligned_fraction", human_aligned_fraction},
          {"warnings", warnings}};
}

DetectionDataset make_dataset(std::vector<DetectionSample> samples, std::size_t batch_size) {
  if (batch_size < 2 || batch_size % 2 != 0) fail_usage("detection dataset: batch size must be even and >= 2");
  if (samples.empty()) fail_data("detection dataset: no samples");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != samples.front().features.size())
      fail_data("detection dataset: inconsistent feature dimensions");
    (samples[i].label == 1 ? pos : neg).push_back(i);
  }
  const std::size_t half = batch_size / 2;
  const std::size_t n_batches = std::min(pos.size(), neg.size()) / half;
  if (n_batches == 0)
    fail_data("detection dataset: cannot form a balanced batch of " + std::to_string(batch_size) +
              " from " + std::to_string(neg.size()) + " grounded and " + std::to_string(pos.size()) +
              " hallucinated samples; achievable: " +
              std::to_string(2 * std::min(pos.size(), neg.size())) + " balanced samples");
  DetectionDataset ds;
  ds.samples = std::move(samples);
  auto& c = ds.composition;
  c.batch_size = batch_size;
  c.batches = n_batches;
  std::size_t synthetic = 0;
  for (std::size_t b = 0; b < n_batches; ++b) {
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < half; ++i) {
      batch.push_back(neg[b * half + i]);
      batch.push_back(pos[b * half + i]);
    }
    for (std::size_t i : batch)
      if (ds.samples[i].source == prompt::Source::synthetic) ++synthetic;
    ds.batches.push_back(std::move(batch));
  }
  c.grounded = c.hallucinated = n_batches * half;
  const std::size_t kept = n_batches * batch_size;
  c.dropped = ds.samples.size() - kept;
  c.synthetic_fraction = static_cast<double>(synthetic) / static_cast<double>(kept);
  c.human_aligned_fraction = 1.0 - c.synthetic_fraction;
  if (c.dropped > 0)
    c.warnings.push_back("dropped " + std::to_string(c.dropped) + " sample(s) (" +
                         std::to_string(neg.size() - c.grounded) + " grounded, " +
                         std::to_string(pos.size() - c.hallucinated) +
                         " hallucinated) that could not fill a balanced batch");
  return ds;
}

DetectionDataset build_detection_dataset(const std::vector<prompt::LabeledPair>& pairs,
                                         const corpus::Vocabulary& vocab, const Matrix& table,
                                         std::size_t batch_size) {
  if (pairs.empty()) fail_data("detection dataset: no labeled pairs");
  std::vector<DetectionSample> samples;
  samples.reserve(pairs.size());
  for (const auto& p : pairs) {
    const auto gen = corpus::tokenize(p.completion, vocab);
    const std::vector<std::vector<TokenId>> docs{corpus::tokenize(p.evidence, vocab)};
    samples.push_back({featurize(gen, docs, table), p.label == prompt::Label::hallucinated ? 1 : 0,
                       p.source});
  }
  return make_dataset(std::move(samples), batch_size);
}

double bce_loss(const ClassifierParams& params, std::span<const DetectionSample> samples,
                ClassifierParams* grad, double l2) {
  if (samples.empty()) fail_usage("bce_loss: empty sample set");
  const double n = static_cast<double>(samples.size());
  double loss = 0.0;
  for (const auto& s : samples) {
    const double z = dot(s.features, params.weights) + params.bias;
    // softplus(z) - y z, stable for large |z|
    loss += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - s.label * z;
    if (grad) {
      const double g = (sigmoid(z) - s.label) / n;
      for (std::size_t j = 0; j < s.features.size(); ++j) grad->weights[j] += g * s.features[j];
      grad->bias += g;
    }
  }
  loss /= n;
  if (l2 > 0.0) {
    loss += 0.5 * l2 * dot(params.weights, params.weights);
    if (grad)
      for (std::size_t j = 0; j < params.weights.size(); ++j) grad->weights[j] += l2 * params.weights[j];
  }
  return loss;
}

TrainResult train_classifier(const DetectionDataset& dataset, const TrainConfig& config) {
  if (dataset.batches.empty()) fail_data("train_classifier: dataset has no batches");
  bool has_pos = false, has_neg = false;
  for (const auto& s : dataset.samples) (s.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) fail_data("train_classifier: dataset must contain both classes");

  TrainResult r{ClassifierParams::zeros(dataset.feature_dim()), {}};
  std::vector<DetectionSample> all;
  for (const auto& b : dataset.batches)
    for (std::size_t i : b) all.push_back(dataset.samples[i]);

  std::vector<std::size_t> order(dataset.batches.size());
  Rng rng(derive_seed(config.seed, 0xD7));
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t b : order) {
      std::vector<DetectionSample> batch;
      for (std::size_t i : dataset.batches[b]) batch.push_back(dataset.samples[i]);
      auto g = ClassifierParams::zeros(r.params.feature_dim());
      bce_loss(r.params, batch, &g, config.l2);
      for (std::size_t j = 0; j < g.weights.size(); ++j) r.params.weights[j] -= config.lr * g.weights[j];
      r.params.bias -= config.lr * g.bias;
    }
    r.loss_curve.push_back(bce_loss(r.params, all, nullptr, config.l2));
  }
  return r;
}

double accuracy(const ClassifierParams& params, std::span<const DetectionSample> samples,
                double threshold) {
  if (samples.empty()) fail_usage("accuracy: empty sample set");
  std::size_t ok = 0;
  for (const auto& s : samples)
    if ((predict(s.features, params) > threshold ? 1 : 0) == s.label) ++ok;
  return static_cast<double>(ok) / static_cast<double>(samples.size());
}

nlohmann::json classifier_to_json(const ClassifierParams& params) {
  return {{"feature_schema_version", kFeatureSchemaVersion},
          {"feature_dim", params.feature_dim()},
          {"weights", params.weights},
          {"bias", params.bias}};
}

ClassifierParams classifier_from_json(const nlohmann::json& j) {
  const int version = j.value("feature_schema_version", -1);
  if (version != kFeatureSchemaVersion)
    fail_data("classifier checkpoint: feature schema version " + std::to_string(version) +
              " is not supported (expected " + std::to_string(kFeatureSchemaVersion) + ")");
  ClassifierParams p{j.at("weights").get<Vec>(), j.at("bias").get<double>()};
  if (p.feature_dim() != j.at("feature_dim").get<std::size_t>())
    fail_data("classifier checkpoint: weight count does not match feature_dim");
  for (double w : p.weights)
    if (!std::isfinite(w)) fail_data("classifier checkpoint: non-finite weight");
  return p;
}

double row_entropy(std::span<const double> row) {
  double h = 0.0;
  for (double p : row)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double attention_entropy(const lm::ForwardTrace& trace) {
  double total = 0.0;
  std::size_t rows = 0;
  for (const auto& layer : trace.attention)
    for (const auto& head : layer)
      for (std::size_t i = trace.logits_from; i < head.rows(); ++i) {
        const auto row = head.row(i);
        double s = 0.0;
        for (double p : row) {
          if (p < 0.0) fail_invariant("attention_entropy: negative attention weight");
          s += p;
        }
        if (std::abs(s - 1.0) > 1e-6)
          fail_invariant("attention_entropy: attention row sums to " + std::to_string(s));
        total += row_entropy(row);
        ++rows;
      }
  if (rows == 0) fail_usage("attention_entropy: trace has no attention rows");
  return total / static_cast<double>(rows);
}

DriftScores semantic_drift(const DistributionSeq& p_gen, const DistributionSeq& p_ret) {
  if (p_gen.size() != p_ret.size())
    fail_usage("semantic_drift: sequence lengths differ (" + std::to_string(p_gen.size()) + " vs " +
               std::to_string(p_ret.size()) + ")");
  if (p_gen.empty()) fail_usage("semantic_drift: empty sequences");
  DriftScores d;
  for (std::size_t t = 0; t < p_gen.size(); ++t) {
    d.cosine += cosine_similarity(p_gen[t].probs, p_ret[t].probs);
    d.jsd += jsd(p_gen[t], p_ret[t]);
  }
  d.cosine /= static_cast<double>(p_gen.size());
  d.jsd /= static_cast<double>(p_gen.size());
  return d;
}

Vec integrated_gradients(const ScoreFn& score, std::span<const double> input,
                         std::span<const double> baseline, std::size_t steps) {
  if (steps == 0) fail_usage("integrated_gradients: steps must be >= 1");
  if (input.size() != baseline.size())
    fail_usage("integrated_gradients: input and baseline shapes differ");
  const std::size_t n = input.size();
  Vec acc(n, 0.0), x(n), g(n);
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = (static_cast<double>(s) + 0.5) / static_cast<double>(steps);
    for (std::size_t i = 0; i < n; ++i) x[i] = baseline[i] + t * (input[i] - baseline[i]);
    std::fill(g.begin(), g.end(), 0.0);
    score(x, g);
    for (std::size_t i = 0; i < n; ++i) acc[i] += g[i];
  }
  for (std::size_t i = 0; i < n; ++i) acc[i] *= (input[i] - baseline[i]) / static_cast<double>(steps);
  return acc;
}

TokenAttribution lm_token_attributions(std::span<const TokenId> context,
                                       std::span<const TokenId> target,
                                       const lm::ToyTransformer& model,
                                       const lm::LoraAdapterStack* adapters, bool active,
                                       std::size_t steps) {
  if (context.empty() || target.empty()) fail_usage("lm_token_attributions: empty context or target");
  std::vector<TokenId> seq(context.begin(), context.end());
  seq.insert(seq.end(), target.begin(), target.end() - 1);
  lm::check_tokens(seq, model);
  for (TokenId t : target) lm::check_tokens(std::span<const TokenId>(&t, 1), model);
  const std::size_t T = seq.size(), d = model.config().d_model, from = context.size() - 1;

  Vec input(T * d);
  for (std::size_t i = 0; i < T; ++i) {
    const auto r = model.token_embedding().row(seq[i]);
    std::copy(r.begin(), r.end(), input.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto score = [&](std::span<const double> x, std::span<double> grad) {
    Matrix rows(T, d, Vec(x.begin(), x.end()));
    const auto cache = lm::forward_embedded(rows, model, adapters, active, from);
    const Matrix& logits = cache.trace.logits;
    Matrix dlogits(logits.rows(), logits.cols());
    double s = 0.0;
    for (std::size_t t = 0; t < logits.rows(); ++t) {
      const Vec p = softmax(logits.row(t));
      s += logits(t, target[t]) - log_sum_exp(logits.row(t));
      for (std::size_t v = 0; v < p.size(); ++v) dlogits(t, v) = -p[v];
      dlogits(t, target[t]) += 1.0;
    }
    if (!grad.empty()) {
      Matrix drows;
      lm::backward(cache, dlogits, model, adapters, nullptr, &drows);
      std::copy(drows.flat().begin(), drows.flat().end(), grad.begin());
    }
    return s;
  };
  const Vec baseline(T * d, 0.0);
  const Vec attr = integrated_gradients(score, input, baseline, steps);
  TokenAttribution out;
  out.per_token.assign(T, 0.0);
  for (std::size_t i = 0; i < T; ++i)
    for (std::size_t j = 0; j < d; ++j) out.per_token[i] += attr[i * d + j];
  out.score_input = score(input, {});
  out.score_baseline = score(baseline, {});
  return out;
}

}  // namespace autorag::detect
