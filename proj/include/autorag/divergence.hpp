#pragma once

// Divergences between token distributions, in nats. Shared by the training
// loss, the drift diagnostics and the evaluation report.

#include <span>

#include "autorag/distribution.hpp"

namespace autorag {

inline constexpr double kKlFloor = 1e-10;

/// sum p log(p / max(q, floor)), with 0 log(0/q) = 0.
double kl_divergence(std::span<const double> p, std::span<const double> q, double floor = kKlFloor);
double kl_divergence(const TokenDistribution& p, const TokenDistribution& q, double floor = kKlFloor);

/// Mean over aligned steps of KL(p_t || q_t).
double sequence_kl(const DistributionSeq& p, const DistributionSeq& q, double floor = kKlFloor);

/// 0.5 KL(P || M) + 0.5 KL(Q || M), M = (P + Q) / 2.
double jsd(std::span<const double> p, std::span<const double> q);
double jsd(const TokenDistribution& p, const TokenDistribution& q);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace autorag
