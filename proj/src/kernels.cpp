#include "autorag/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

#include <omp.h>

namespace autorag::kernels {

namespace {

std::atomic<Backend> g_backend{Backend::parallel};

// Below this many multiply-adds the thread fork costs more than it saves.
constexpr long kParallelWork = 1L << 15;

void check_nt(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows())
    throw std::invalid_argument("matmul_nt: shape mismatch");
}
void check_nn(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
    throw std::invalid_argument("matmul_nn: shape mismatch");
}
void check_tn(const Matrix& a, const Matrix& b, const Matrix& c) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
    throw std::invalid_argument("matmul_tn: shape mismatch");
}

inline void nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k = a.cols();
  const double* ar = a.data() + i * k;
  for (std::size_t j = 0; j < b.rows(); ++j) {
    const double* br = b.data() + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
    c(i, j) = s;
  }
}

inline void nn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  double* cr = c.data() + i * n;
  std::fill(cr, cr + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a(i, p);
    const double* br = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

inline void tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t n = b.cols();
  double* cr = c.data() + i * n;
  std::fill(cr, cr + n, 0.0);
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double av = a(p, i);
    const double* br = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
  }
}

inline void bm25_range(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                       double avg, double k1, double b, std::span<double> scores,
                       std::uint32_t lo, std::uint32_t hi) {
  for (const auto& term : terms) {
    auto first = std::lower_bound(term.postings.begin(), term.postings.end(), lo,
                                  [](const Posting& p, std::uint32_t d) { return p.doc < d; });
    for (auto it = first; it != term.postings.end() && it->doc < hi; ++it) {
      scores[it->doc] += bm25_term(term.idf, it->tf, doc_lengths[it->doc], avg, k1, b);
    }
  }
}

}  // namespace

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

namespace serial {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check_nt(a, b, c);
  for (std::size_t i = 0; i < a.rows(); ++i) nt_row(a, b, c, i);
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_nn(a, b, c);
  for (std::size_t i = 0; i < a.rows(); ++i) nn_row(a, b, c, i);
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_tn(a, b, c);
  for (std::size_t i = 0; i < a.cols(); ++i) tn_row(a, b, c, i);
}

void bm25_accumulate(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                     double avg_doc_length, double k1, double b, std::span<double> scores) {
  bm25_range(terms, doc_lengths, avg_doc_length, k1, b, scores, 0,
             static_cast<std::uint32_t>(scores.size()));
}

}  // namespace serial

namespace parallel {

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check_nt(a, b, c);
  const long rows = static_cast<long>(a.rows());
  const long work = rows * static_cast<long>(b.rows() * a.cols());
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long i = 0; i < rows; ++i) nt_row(a, b, c, static_cast<std::size_t>(i));
}

void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_nn(a, b, c);
  const long rows = static_cast<long>(a.rows());
  const long work = rows * static_cast<long>(b.cols() * a.cols());
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long i = 0; i < rows; ++i) nn_row(a, b, c, static_cast<std::size_t>(i));
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
  check_tn(a, b, c);
  const long rows = static_cast<long>(a.cols());
  const long work = rows * static_cast<long>(b.cols() * a.rows());
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (long i = 0; i < rows; ++i) tn_row(a, b, c, static_cast<std::size_t>(i));
}

void bm25_accumulate(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                     double avg_doc_length, double k1, double b, std::span<double> scores) {
  // Each thread owns a contiguous doc-id range and walks the terms in the
  // same order as the serial kernel, so per-document sums match exactly.
  const auto n = static_cast<std::uint32_t>(scores.size());
  std::size_t postings = 0;
  for (const auto& t : terms) postings += t.postings.size();
#pragma omp parallel if (postings > 4096)
  {
    const auto nt = static_cast<std::uint32_t>(omp_get_num_threads());
    const auto tid = static_cast<std::uint32_t>(omp_get_thread_num());
    const std::uint32_t chunk = (n + nt - 1) / nt;
    const std::uint32_t lo = std::min(n, tid * chunk);
    const std::uint32_t hi = std::min(n, lo + chunk);
    bm25_range(terms, doc_lengths, avg_doc_length, k1, b, scores, lo, hi);
  }
}

}  // namespace parallel

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  if (backend() == Backend::serial) serial::matmul_nt(a, b, c);
  else parallel::matmul_nt(a, b, c);
  return c;
}

Matrix matmul_nn(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  if (backend() == Backend::serial) serial::matmul_nn(a, b, c);
  else parallel::matmul_nn(a, b, c);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols(), b.cols());
  if (backend() == Backend::serial) serial::matmul_tn(a, b, c);
  else parallel::matmul_tn(a, b, c);
  return c;
}

void bm25_accumulate(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                     double avg_doc_length, double k1, double b, std::span<double> scores) {
  if (backend() == Backend::serial)
    serial::bm25_accumulate(terms, doc_lengths, avg_doc_length, k1, b, scores);
  else
    parallel::bm25_accumulate(terms, doc_lengths, avg_doc_length, k1, b, scores);
}

}  // namespace autorag::kernels
