#include "autorag/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "autorag/error.hpp"

namespace autorag {

namespace {

void check_dims(std::span<const double> p, std::span<const double> q, const char* what) {
  if (p.size() != q.size())
    fail_usage(std::string(what) + ": dimension mismatch (" + std::to_string(p.size()) + " vs " +
               std::to_string(q.size()) + ")");
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q, double floor) {
  check_dims(p, q, "kl_divergence");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) s += p[i] * (std::log(p[i]) - std::log(std::max(q[i], floor)));
  return s;
}

double kl_divergence(const TokenDistribution& p, const TokenDistribution& q, double floor) {
  return kl_divergence(p.probs, q.probs, floor);
}

double sequence_kl(const DistributionSeq& p, const DistributionSeq& q, double floor) {
  if (p.size() != q.size())
    fail_usage("sequence_kl: sequences are not aligned (" + std::to_string(p.size()) + " vs " +
               std::to_string(q.size()) + " steps)");
  if (p.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t t = 0; t < p.size(); ++t) s += kl_divergence(p[t], q[t], floor);
  return s / static_cast<double>(p.size());
}

double jsd(std::span<const double> p, std::span<const double> q) {
  check_dims(p, q, "jsd");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    const double tp = p[i] > 0.0 ? p[i] * std::log(p[i] / m) : 0.0;
    const double tq = q[i] > 0.0 ? q[i] * std::log(q[i] / m) : 0.0;
    s += 0.5 * (tp + tq);  // commutative in (p, q), so jsd(p, q) == jsd(q, p) exactly
  }
  return std::clamp(s, 0.0, std::numbers::ln2);
}

double jsd(const TokenDistribution& p, const TokenDistribution& q) { return jsd(p.probs, q.probs); }

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  check_dims(a, b, "cosine_similarity");
  const double na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) fail_usage("cosine_similarity: zero vector");
  return dot(a, b) / (na * nb);
}

namespace metrics {

std::size_t lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (reference.empty()) fail_usage("rouge_l: empty reference");
  if (candidate.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

nlohmann::json RecordMetrics::to_json() const {
  nlohmann::json j{{"fingerprint", fingerprint},
                   {"flagged", flagged},
                   {"adapter_active", adapter_active},
                   {"kl_drift", kl_drift},
                   {"jsd", jsd},
                   {"attention_entropy", attention_entropy}};
  j["rouge_l"] = rouge_l ? nlohmann::json(*rouge_l) : nlohmann::json(nullptr);
  return j;
}

RecordMetrics RecordMetrics::from_json(const nlohmann::json& j) {
  RecordMetrics m;
  m.fingerprint = j.at("fingerprint").get<std::string>();
  m.flagged = j.at("flagged").get<bool>();
  m.adapter_active = j.at("adapter_active").get<bool>();
  m.kl_drift = j.at("kl_drift").get<double>();
  m.jsd = j.at("jsd").get<double>();
  m.attention_entropy = j.at("attention_entropy").get<double>();
  if (j.contains("rouge_l") && !j["rouge_l"].is_null()) m.rouge_l = j["rouge_l"].get<double>();
  return m;
}

double hallucination_rate(std::span<const RecordMetrics> records) {
  if (records.empty()) fail_usage("hallucination_rate: no records");
  std::size_t n = 0;
  for (const auto& r : records) n += r.flagged ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(records.size());
}

MetricReport aggregate_report(std::span<const RecordMetrics> records) {
  if (records.empty()) fail_usage("aggregate_report: no records");
  MetricReport rep;
  rep.fingerprint = records.front().fingerprint;
  for (const auto& r : records) {
    if (r.fingerprint != rep.fingerprint)
      fail_data("aggregate_report: fingerprint mismatch (" + r.fingerprint + " vs " + rep.fingerprint + ")");
    for (double v : {r.kl_drift, r.jsd, r.attention_entropy})
      if (!std::isfinite(v)) fail_invariant("aggregate_report: non-finite metric value");
    ++rep.samples;
    rep.flagged += r.flagged ? 1 : 0;
    rep.adapter_activations += r.adapter_active ? 1 : 0;
    rep.kl_drift += r.kl_drift;
    rep.jsd += r.jsd;
    rep.attention_entropy += r.attention_entropy;
    if (r.rouge_l) {
      rep.rouge_l += *r.rouge_l;
      ++rep.rouge_samples;
    }
  }
  const double n = static_cast<double>(rep.samples);
  rep.kl_drift /= n;
  rep.jsd /= n;
  rep.attention_entropy /= n;
  if (rep.rouge_samples) rep.rouge_l /= static_cast<double>(rep.rouge_samples);
  rep.hallucination_rate = static_cast<double>(rep.flagged) / n;
  return rep;
}

nlohmann::json MetricReport::to_json() const {
  return {{"fingerprint", fingerprint},
          {"samples", samples},
          {"flagged", flagged},
          {"adapter_activations", adapter_activations},
          {"rouge_samples", rouge_samples},
          {"kl_drift_nats", kl_drift},
          {"jsd_nats", jsd},
          {"rouge_l", rouge_l},
          {"attention_entropy_nats", attention_entropy},
          {"hallucination_rate", hallucination_rate}};
}

std::string MetricReport::to_text() const {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  const auto row = [&](const char* name, double nats) {
    s << std::left << std::setw(20) << name << std::right << std::setw(12) << nats << std::setw(12)
      << nats / std::numbers::ln2 << '\n';
  };
  s << "fingerprint " << fingerprint << "\n";
  s << "samples " << samples << ", flagged " << flagged << ", adapter activations "
    << adapter_activations << "\n\n";
  s << std::left << std::setw(20) << "metric" << std::right << std::setw(12) << "nats" << std::setw(12)
    << "bits" << '\n';
  row("kl_drift", kl_drift);
  row("jsd", jsd);
  row("attention_entropy", attention_entropy);
  s << std::left << std::setw(20) << "hallucination_rate" << std::right << std::setw(12)
    << hallucination_rate << '\n';
  s << std::left << std::setw(20) << "rouge_l" << std::right << std::setw(12) << rouge_l << "  (n="
    << rouge_samples << ")\n";
  return s.str();
}

}  // namespace metrics
}  // namespace autorag
