#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autorag/tensor.hpp"

namespace autorag {

/// FNV-1a over raw bytes; used for content fingerprints of weights and configs.
class Fnv1a {
 public:
  void update(const void* data, std::size_t n);
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(std::span<const double> v) { update(v.data(), v.size() * sizeof(double)); }
  void update(std::uint64_t v) { update(&v, sizeof v); }
  std::uint64_t digest() const { return h_; }
  std::string hex() const;

 private:
  std::uint64_t h_ = 14695981039346656037ULL;
};

/// SplitMix64-seeded xoshiro256** generator. All sampling helpers are
/// implemented here so sequences do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  /// Uniform double in [0, 1).
  double uniform();
  double gaussian(double mean = 0.0, double stddev = 1.0);
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derive an independent stream seed from a base seed and a salt.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

void fill_gaussian(Matrix& m, Rng& rng, double stddev);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

/// Read a whole file; throws a data error when missing.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);
void append_line(const std::string& path, std::string_view line);

/// Current UTC time as ISO-8601 with milliseconds.
std::string utc_timestamp();

}  // namespace autorag
