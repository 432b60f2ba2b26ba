#pragma once

// Toy decoder-only transformer with LoRA-adapted Q and V projections.
//
// Pre-norm blocks: x += Attn(rms(x)); x += W2 gelu(W1 rms(x)); logits =
// Wout rms(x). RMS normalization has no learnable gain and projections have
// no bias. Only the adapter stack ever receives gradients.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "autorag/corpus.hpp"
#include "autorag/distribution.hpp"
#include "autorag/lora.hpp"
#include "autorag/tensor.hpp"

namespace autorag::lm {

using corpus::TokenId;

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  std::size_t max_seq = 128;
  std::uint64_t seed = 1;
  int quant_bits = 0;  // 0: full precision base
  std::size_t quant_block = 64;

  std::size_t ff_dim() const { return d_ff ? d_ff : 4 * d_model; }
  std::string describe() const;
};

struct LayerWeights {
  Matrix wq, wk, wv, wo;  // d x d
  Matrix w1;              // d_ff x d
  Matrix w2;              // d x d_ff
};

class ToyTransformer {
 public:
  static ToyTransformer create(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const Matrix& token_embedding() const { return tok_emb_; }
  const Matrix& positional() const { return pos_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }
  const Matrix& head() const { return head_; }

  /// Content hash of every frozen weight matrix as currently held.
  std::string weight_hash() const;
  /// Identifies the base model an adapter checkpoint was trained against:
  /// architecture, seed, quantization setting and the source weight hash.
  std::string fingerprint() const;

  /// Copy whose linear layers hold blockwise-quantized-then-dequantized
  /// weights. Embeddings stay full precision.
  ToyTransformer quantized(int bits, std::size_t block_size) const;
  const std::vector<QuantizedWeights>& quantized_blocks() const { return quantized_; }

 private:
  ModelConfig config_;
  Matrix tok_emb_;
  Matrix pos_;
  std::vector<LayerWeights> layers_;
  Matrix head_;
  std::string source_hash_;
  std::vector<QuantizedWeights> quantized_;
};

/// Fresh adapters: A ~ N(0, init_std^2), B = 0, DoRA magnitudes = column
/// norms of the frozen W.
LoraAdapterStack create_adapters(const ToyTransformer& model, const LoraConfig& config,
                                 std::uint64_t seed);

struct ForwardTrace {
  Matrix logits;  // row r holds position logits_from + r
  std::size_t logits_from = 0;
  std::vector<std::vector<Matrix>> attention;  // [layer][head], T x T, causal rows
};

/// Activations retained for the backward pass.
struct ForwardCache {
  struct Layer {
    Matrix x_in, n1;
    Vec inv1;
    Matrix q, k, v;
    Matrix q_low, v_low;  // N A^T for plain LoRA targets
    Matrix wq_eff, wv_eff;  // composed weights for DoRA targets
    Matrix o, x_mid, n2;
    Vec inv2;
    Matrix u, g;
  };
  std::vector<Layer> layers;
  Matrix x_final, n_final;
  Vec inv_final;
  bool adapters_on = false;
  ForwardTrace trace;
};

void check_tokens(std::span<const TokenId> tokens, const ToyTransformer& model);

/// Causal forward pass. With active = false (or a null stack) the adapters
/// are bypassed entirely.
ForwardTrace forward(std::span<const TokenId> tokens, const ToyTransformer& model,
                     const LoraAdapterStack* adapters, bool active, std::size_t logits_from = 0);

ForwardCache forward_cached(std::span<const TokenId> tokens, const ToyTransformer& model,
                            const LoraAdapterStack* adapters, bool active,
                            std::size_t logits_from = 0);

/// Forward from explicit token-embedding rows (positions are added inside).
ForwardCache forward_embedded(const Matrix& token_rows, const ToyTransformer& model,
                              const LoraAdapterStack* adapters, bool active,
                              std::size_t logits_from = 0);

/// Backpropagates dL/dlogits (same shape as cache.trace.logits). Adapter
/// gradients are accumulated into `grads` (shaped like the adapter stack)
/// when non-null; dL/d(token embedding rows) is written to `d_token_rows`
/// when non-null.
void backward(const ForwardCache& cache, const Matrix& dlogits, const ToyTransformer& model,
              const LoraAdapterStack* adapters, LoraAdapterStack* grads, Matrix* d_token_rows);

/// [BOS] prompt [SEP] doc_1 [SEP] ... doc_K [SEP]
std::vector<TokenId> build_context(std::span<const TokenId> prompt,
                                   const std::vector<std::vector<TokenId>>& docs);

struct DecodeResult {
  std::vector<TokenId> tokens;
  DistributionSeq distributions;
  std::vector<TokenId> context;
  ForwardTrace trace;  // final forward over context + generated tokens
};

/// Greedy decoding. Stops after EOS (which is emitted) or max_len tokens.
DecodeResult decode_greedy(std::span<const TokenId> prompt,
                           const std::vector<std::vector<TokenId>>& docs,
                           const ToyTransformer& model, const LoraAdapterStack* adapters,
                           bool active, std::size_t max_len);

/// Softmax distributions of a teacher-forced continuation: step t predicts
/// target[t] from context + target[0..t).
DistributionSeq teacher_forced(std::span<const TokenId> context, std::span<const TokenId> target,
                               const ToyTransformer& model, const LoraAdapterStack* adapters,
                               bool active);

}  // namespace autorag::lm
