#pragma once

// Helpers shared by the test binaries.

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "autorag/config.hpp"
#include "autorag/detect.hpp"
#include "autorag/pipeline.hpp"
#include "autorag/prompt.hpp"
#include "autorag/util.hpp"

#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("autorag_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  std::string str(const std::string& leaf = "") const {
    return leaf.empty() ? path_.string() : (path_ / leaf).string();
  }

 private:
  fs::path path_;
};

/// Stores over the bundled corpus with a detector trained the same way the
/// CLI trains it.
inline std::unique_ptr<autorag::pipeline::Stores> trained_stores(autorag::PipelineConfig cfg) {
  using namespace autorag;
  cfg.validate();
  auto index = corpus::ingest_corpus(cfg.corpus_path, {cfg.vocab_cap});
  auto stores = std::make_unique<pipeline::Stores>(cfg, std::move(index), detect::ClassifierParams{});
  const auto rules = prompt::load_rule_table_file(cfg.rules_path);
  const auto synonyms = prompt::load_synonym_table_file(cfg.synonyms_path);
  const auto pairs = prompt::build_negative_set(
      stores->index(), prompt::max_negative_set_size(stores->index(), rules), cfg.data_seed, rules,
      synonyms);
  const auto ds = detect::build_detection_dataset(pairs, stores->index().vocab(),
                                                  stores->embeddings(), cfg.detector_batch);
  const auto r = detect::train_classifier(
      ds, {cfg.detector_epochs, cfg.detector_lr, cfg.train_seed, cfg.detector_l2});
  stores->set_classifier(r.params);
  return stores;
}

inline autorag::Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                     double stddev = 1.0) {
  autorag::Matrix m(rows, cols);
  autorag::Rng rng(seed);
  autorag::fill_gaussian(m, rng, stddev);
  return m;
}

}  // namespace testing
