#pragma once

// KL-regularized contrastive correction of the adapter stack.
//
//   L_total = CE + lambda1 KL(P_gen || P_ret) + lambda2 clamp(KL(P+ || P_ret) - KL(P- || P_ret))
//
// P_ret is the frozen base (adapters off) teacher-forced along the grounded
// reference; P_gen and P+ are the adapted model along the same tokens and P-
// is the adapted model along a corrupted completion. Divergences are
// per-step KL averaged over the sequence.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "autorag/divergence.hpp"
#include "autorag/model.hpp"

namespace autorag::feedback {

using corpus::TokenId;

struct LossConfig {
  double lambda1 = 0.4;
  double lambda2 = 0.6;
  double kl_floor = kKlFloor;
  double contrast_clamp = 10.0;
  double tau = 0.7;
};

struct LossBreakdown {
  double ce = 0.0;
  double kl = 0.0;
  double contrast = 0.0;
  double total = 0.0;
  double lambda1 = 0.4;
  double lambda2 = 0.6;
  bool contrast_clamped = false;

  nlohmann::json to_json() const;
  static LossBreakdown from_json(const nlohmann::json& j);
};

LossBreakdown total_loss(double ce, double kl, double contrast, double lambda1 = 0.4,
                         double lambda2 = 0.6);

/// Frozen-base teacher-forced distributions along `target`.
DistributionSeq reference_distribution(std::span<const TokenId> prompt,
                                       const std::vector<std::vector<TokenId>>& docs,
                                       const lm::ToyTransformer& model,
                                       std::span<const TokenId> target);

/// mean_t [KL(P+_t || R_t) - KL(P-_t || R_t)], clamped to [-clamp, clamp].
double contrastive_kl(const DistributionSeq& plus, const DistributionSeq& minus,
                      const DistributionSeq& ret, double clamp = 10.0, double floor = kKlFloor);

/// Truncates or pads with EOS to `length` tokens.
std::vector<TokenId> align_to_length(std::span<const TokenId> tokens, std::size_t length);

struct CorrectionBatch {
  std::vector<TokenId> prompt;
  std::vector<std::vector<TokenId>> docs;
  std::vector<TokenId> target;    // grounded reference; also the CE target
  std::vector<TokenId> negative;  // corrupted completion, same length as target
  bool use_positive = false;      // P+ admitted (grounded p_hall < 0.3)
  bool use_negative = false;      // P- admitted (corrupted p_hall > 0.7)
  double p_hall = 0.0;            // score that gated this batch
  DistributionSeq p_ret;

  std::vector<TokenId> context() const { return lm::build_context(prompt, docs); }
};

CorrectionBatch make_correction_batch(std::vector<TokenId> prompt,
                                      std::vector<std::vector<TokenId>> docs,
                                      std::vector<TokenId> target, std::span<const TokenId> negative,
                                      double p_hall, bool use_positive, bool use_negative,
                                      const lm::ToyTransformer& model);

/// Loss at the current adapters; accumulates dL/d(adapter params) into
/// `grads` when non-null.
LossBreakdown evaluate_loss(const CorrectionBatch& batch, const lm::ToyTransformer& model,
                            const lm::LoraAdapterStack& adapters, const LossConfig& config,
                            lm::LoraAdapterStack* grads);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  lm::LoraAdapterStack m;
  lm::LoraAdapterStack v;

  static AdamState for_adapters(const lm::LoraAdapterStack& adapters);
  nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j, const lm::LoraAdapterStack& shape);
};

void adam_update(lm::LoraAdapterStack& params, const lm::LoraAdapterStack& grads, AdamState& state,
                 double lr);

struct StepResult {
  bool applied = false;
  std::string skip_reason;
  LossBreakdown loss;
  double grad_norm = 0.0;
};

/// One correction update. Skips (no update, no loss) unless the batch's
/// p_hall exceeds config.tau.
StepResult feedback_step(const CorrectionBatch& batch, const lm::ToyTransformer& model,
                         lm::LoraAdapterStack& adapters, AdamState& state, double lr,
                         const LossConfig& config);

nlohmann::json adapters_to_json(const lm::LoraAdapterStack& adapters);
lm::LoraAdapterStack adapters_from_json(const nlohmann::json& j);

}  // namespace autorag::feedback
