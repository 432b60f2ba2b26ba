#pragma once

#include <cstddef>
#include <vector>

#include "autorag/tensor.hpp"

namespace autorag {

/// Probability vector over the vocabulary for one decoding step.
struct TokenDistribution {
  Vec probs;
  std::size_t step = 0;
};

using DistributionSeq = std::vector<TokenDistribution>;

}  // namespace autorag
