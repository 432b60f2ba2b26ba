#pragma once

// Low-rank adapters on the attention Q and V projections, the DoRA
// magnitude/direction variant, conditional gating and blockwise weight
// quantization for a QLoRA-style frozen base.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "autorag/tensor.hpp"

namespace autorag::lm {

enum class ScaleMode { alpha_over_rank, alpha };

struct LoraConfig {
  std::size_t rank = 8;
  double lora_alpha = 16.0;
  ScaleMode scale_mode = ScaleMode::alpha_over_rank;
  double init_std = 0.01;
  bool dora = false;
};

double lora_scale(const LoraConfig& c);
std::string to_string(ScaleMode m);
ScaleMode parse_scale_mode(const std::string& s);

enum class TargetKind { query = 0, value = 1 };

/// One adapted matrix W (d x k): A is r x k, B is d x r. `magnitude` has k
/// entries when DoRA is enabled and is empty otherwise.
struct LoraTarget {
  Matrix a;
  Matrix b;
  Vec magnitude;

  bool dora() const { return !magnitude.empty(); }
};

class LoraAdapterStack {
 public:
  LoraAdapterStack() = default;
  LoraAdapterStack(std::size_t n_layers, LoraConfig config);

  LoraTarget& target(std::size_t layer, TargetKind kind) {
    return targets_.at(layer * 2 + static_cast<std::size_t>(kind));
  }
  const LoraTarget& target(std::size_t layer, TargetKind kind) const {
    return targets_.at(layer * 2 + static_cast<std::size_t>(kind));
  }
  std::size_t n_layers() const { return targets_.size() / 2; }
  const LoraConfig& config() const { return config_; }
  double scale() const { return lora_scale(config_); }

  static std::string target_name(std::size_t layer, TargetKind kind);

  /// Same shapes, all entries zero. Used for gradients and optimizer moments.
  LoraAdapterStack zeros_like() const;

  /// Visits every trainable tensor in a fixed order.
  void for_each_param(const std::function<void(const std::string&, std::span<double>)>& fn);
  void for_each_param(const std::function<void(const std::string&, std::span<const double>)>& fn) const;
  std::size_t parameter_count() const;

  bool active = true;

 private:
  LoraConfig config_{};
  std::vector<LoraTarget> targets_;
};

/// W h + scale * B (A h), without forming B A.
Vec lora_apply(std::span<const double> h, const Matrix& w, const Matrix& a, const Matrix& b,
               double scale);

/// Adapters switch on only when p_hall strictly exceeds tau.
inline bool adapter_gate(double p_hall, double tau) { return p_hall > tau; }

Vec column_norms(const Matrix& w);

/// magnitude (per column) times the column-normalized W + scale * B A.
Matrix dora_compose(const Matrix& w, const Matrix& a, const Matrix& b,
                    std::span<const double> magnitude, double scale = 1.0);

/// Blockwise affine quantization over the row-major flattening of a
/// matrix. Each block stores its minimum (offset) and step
/// ((max - min) / (2^bits - 1)); codes are packed two per byte at 4 bits.
struct QuantizedWeights {
  int bits = 4;
  std::size_t block_size = 64;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> packed;
  Vec offsets;
  Vec steps;

  std::size_t block_count() const { return offsets.size(); }
  std::uint8_t code(std::size_t i) const;
  Matrix dequantize() const;
};

struct QuantizeResult {
  QuantizedWeights quantized;
  Matrix dequantized;
};

QuantizeResult quantize_roundtrip(const Matrix& w, int bits = 4, std::size_t block_size = 64);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace autorag::lm
