#include "autorag/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace autorag {

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -INFINITY;
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

Vec softmax(std::span<const double> logits) {
  Vec p(logits.size());
  if (logits.empty()) return p;
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    s += p[i];
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace autorag
