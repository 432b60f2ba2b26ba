#include "autorag/lora.hpp"

#include <algorithm>
#include <cmath>

#include "autorag/error.hpp"

namespace autorag::lm {

double lora_scale(const LoraConfig& c) {
  if (c.scale_mode == ScaleMode::alpha) return c.lora_alpha;
  return c.lora_alpha / static_cast<double>(c.rank);
}

std::string to_string(ScaleMode m) { return m == ScaleMode::alpha ? "alpha" : "alpha_over_rank"; }

ScaleMode parse_scale_mode(const std::string& s) {
  if (s == "alpha") return ScaleMode::alpha;
  if (s == "alpha_over_rank") return ScaleMode::alpha_over_rank;
  fail_usage("unknown LoRA scale mode '" + s + "' (expected alpha_over_rank or alpha)");
}

LoraAdapterStack::LoraAdapterStack(std::size_t n_layers, LoraConfig config)
    : config_(config), targets_(n_layers * 2) {}

std::string LoraAdapterStack::target_name(std::size_t layer, TargetKind kind) {
  return "layer" + std::to_string(layer) + (kind == TargetKind::query ? ".q" : ".v");
}

LoraAdapterStack LoraAdapterStack::zeros_like() const {
  LoraAdapterStack z(n_layers(), config_);
  z.active = active;
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    z.targets_[i].a = Matrix(targets_[i].a.rows(), targets_[i].a.cols());
    z.targets_[i].b = Matrix(targets_[i].b.rows(), targets_[i].b.cols());
    z.targets_[i].magnitude.assign(targets_[i].magnitude.size(), 0.0);
  }
  return z;
}

void LoraAdapterStack::for_each_param(
    const std::function<void(const std::string&, std::span<double>)>& fn) {
  for (std::size_t l = 0; l < n_layers(); ++l)
    for (auto kind : {TargetKind::query, TargetKind::value}) {
      auto& t = target(l, kind);
      const auto name = target_name(l, kind);
      fn(name + ".a", t.a.flat());
      fn(name + ".b", t.b.flat());
      if (t.dora()) fn(name + ".magnitude", t.magnitude);
    }
}

void LoraAdapterStack::for_each_param(
    const std::function<void(const std::string&, std::span<const double>)>& fn) const {
  for (std::size_t l = 0; l < n_layers(); ++l)
    for (auto kind : {TargetKind::query, TargetKind::value}) {
      const auto& t = target(l, kind);
      const auto name = target_name(l, kind);
      fn(name + ".a", t.a.flat());
      fn(name + ".b", t.b.flat());
      if (t.dora()) fn(name + ".magnitude", t.magnitude);
    }
}

std::size_t LoraAdapterStack::parameter_count() const {
  std::size_t n = 0;
  for_each_param([&](const std::string&, std::span<const double> p) { n += p.size(); });
  return n;
}

Vec lora_apply(std::span<const double> h, const Matrix& w, const Matrix& a, const Matrix& b,
               double scale) {
  if (w.cols() != h.size() || a.cols() != h.size() || b.rows() != w.rows() || b.cols() != a.rows())
    fail_usage("lora_apply: shape mismatch");
  Vec low(a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r) low[r] = dot(a.row(r), h);
  Vec y(w.rows());
  for (std::size_t i = 0; i < w.rows(); ++i) y[i] = dot(w.row(i), h) + scale * dot(b.row(i), low);
  return y;
}

Vec column_norms(const Matrix& w) {
  Vec n(w.cols(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) n[j] += w(i, j) * w(i, j);
  for (double& v : n) v = std::sqrt(v);
  return n;
}

Matrix dora_compose(const Matrix& w, const Matrix& a, const Matrix& b,
                    std::span<const double> magnitude, double scale) {
  if (a.cols() != w.cols() || b.rows() != w.rows() || b.cols() != a.rows())
    fail_usage("dora_compose: shape mismatch");
  if (magnitude.size() != w.cols()) fail_usage("dora_compose: magnitude needs one entry per column");
  for (double m : magnitude)
    if (!(m > 0.0)) fail_usage("dora_compose: magnitude entries must be strictly positive");
  Matrix m = w;
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += b(i, r) * a(r, j);
      m(i, j) += scale * s;
    }
  const Vec norms = column_norms(m);
  for (std::size_t j = 0; j < w.cols(); ++j)
    if (norms[j] == 0.0)
      fail_usage("dora_compose: column " + std::to_string(j) + " of W + BA is zero; direction undefined");
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) m(i, j) = magnitude[j] * (m(i, j) / norms[j]);
  return m;
}

std::uint8_t QuantizedWeights::code(std::size_t i) const {
  if (bits == 8) return packed[i];
  const std::uint8_t byte = packed[i / 2];
  return (i % 2 == 0) ? (byte & 0x0F) : static_cast<std::uint8_t>(byte >> 4);
}

Matrix QuantizedWeights::dequantize() const {
  Matrix out(rows, cols);
  auto flat = out.flat();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const std::size_t blk = i / block_size;
    flat[i] = offsets[blk] + steps[blk] * static_cast<double>(code(i));
  }
  return out;
}

QuantizeResult quantize_roundtrip(const Matrix& w, int bits, std::size_t block_size) {
  if (bits != 4 && bits != 8) fail_usage("quantize_roundtrip: bits must be 4 or 8");
  if (w.empty()) fail_usage("quantize_roundtrip: empty matrix");
  if (block_size == 0) fail_usage("quantize_roundtrip: block size must be positive");
  const double levels = static_cast<double>((1 << bits) - 1);
  QuantizedWeights q;
  q.bits = bits;
  q.block_size = block_size;
  q.rows = w.rows();
  q.cols = w.cols();
  const auto flat = w.flat();
  const std::size_t n = flat.size();
  q.packed.assign(bits == 8 ? n : (n + 1) / 2, 0);
  for (std::size_t start = 0; start < n; start += block_size) {
    const std::size_t end = std::min(n, start + block_size);
    const auto [lo, hi] = std::minmax_element(flat.begin() + static_cast<long>(start),
                                              flat.begin() + static_cast<long>(end));
    const double step = (*hi - *lo) / levels;
    q.offsets.push_back(*lo);
    q.steps.push_back(step);
    for (std::size_t i = start; i < end; ++i) {
      long c = 0;
      if (step > 0.0) c = std::lround((flat[i] - *lo) / step);
      const auto code = static_cast<std::uint8_t>(std::clamp<long>(c, 0, static_cast<long>(levels)));
      if (bits == 8) q.packed[i] = code;
      else q.packed[i / 2] |= (i % 2 == 0) ? code : static_cast<std::uint8_t>(code << 4);
    }
  }
  Matrix deq = q.dequantize();
  return {std::move(q), std::move(deq)};
}

nlohmann::json matrix_to_json(const Matrix& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.values()}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                j.at("data").get<std::vector<double>>());
}

}  // namespace autorag::lm
