// Serial reference vs OpenMP kernels on transformer- and retrieval-sized inputs.

#include <benchmark/benchmark.h>

#include <vector>

#include "autorag/kernels.hpp"
#include "autorag/util.hpp"

using namespace autorag;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Matrix m(r, c);
  Rng rng(seed);
  fill_gaussian(m, rng, 1.0);
  return m;
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
void bm_matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix c(n, n);
  for (auto _ : state) {
    Kernel(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
}

struct Bm25Fixture {
  std::vector<std::vector<kernels::Posting>> lists;
  std::vector<kernels::Bm25Term> terms;
  std::vector<double> lengths;
  double avg = 0.0;

  explicit Bm25Fixture(std::size_t docs) : lengths(docs) {
    Rng rng(7);
    for (auto& l : lengths) {
      l = 5.0 + static_cast<double>(rng.below(60));
      avg += l;
    }
    avg /= static_cast<double>(docs);
    for (int t = 0; t < 8; ++t) {
      std::vector<kernels::Posting> p;
      for (std::uint32_t d = 0; d < docs; ++d)
        if (rng.below(4) == 0) p.push_back({d, static_cast<std::uint32_t>(1 + rng.below(3))});
      lists.push_back(std::move(p));
    }
    for (const auto& l : lists) terms.push_back({1.0 + 0.1 * static_cast<double>(terms.size()), l});
  }
};

template <void (*Kernel)(std::span<const kernels::Bm25Term>, std::span<const double>, double, double,
                         double, std::span<double>)>
void bm_bm25(benchmark::State& state) {
  const auto docs = static_cast<std::size_t>(state.range(0));
  Bm25Fixture f(docs);
  std::vector<double> scores(docs);
  for (auto _ : state) {
    std::fill(scores.begin(), scores.end(), 0.0);
    Kernel(f.terms, f.lengths, f.avg, 1.2, 0.75, scores);
    benchmark::DoNotOptimize(scores.data());
  }
}

}  // namespace

BENCHMARK(bm_matmul<kernels::serial::matmul_nt>)->Name("matmul_nt/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::parallel::matmul_nt>)->Name("matmul_nt/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::serial::matmul_nn>)->Name("matmul_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::parallel::matmul_nn>)->Name("matmul_nn/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::serial::matmul_tn>)->Name("matmul_tn/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<kernels::parallel::matmul_tn>)->Name("matmul_tn/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_bm25<kernels::serial::bm25_accumulate>)->Name("bm25/serial")->Arg(10000)->Arg(200000);
BENCHMARK(bm_bm25<kernels::parallel::bm25_accumulate>)->Name("bm25/parallel")->Arg(10000)->Arg(200000);

BENCHMARK_MAIN();
