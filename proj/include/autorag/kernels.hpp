#pragma once

// Dense kernels used by the transformer, the retriever and the detector.
//
// Every kernel exists twice: a plain serial reference in `serial::` and an
// OpenMP version in `parallel::`. Both compute each output element with the
// same summation order, so their results are bit-identical; the parallel
// versions only split the outer loop across threads.

#include <cstdint>
#include <span>
#include <vector>

#include "autorag/tensor.hpp"

namespace autorag::kernels {

enum class Backend { serial, parallel };

void set_backend(Backend b);
Backend backend();

/// Sparse postings view used by batch BM25 scoring.
struct Posting {
  std::uint32_t doc;
  std::uint32_t tf;
};

struct Bm25Term {
  double idf;
  std::span<const Posting> postings;
};

namespace serial {
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);  // c = a * b^T
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c);  // c = a * b
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);  // c = a^T * b
void bm25_accumulate(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                     double avg_doc_length, double k1, double b, std::span<double> scores);
}  // namespace serial

namespace parallel {
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nn(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);
void bm25_accumulate(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                     double avg_doc_length, double k1, double b, std::span<double> scores);
}  // namespace parallel

// Dispatch on the active backend. Output matrices are allocated here.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
Matrix matmul_nn(const Matrix& a, const Matrix& b);
Matrix matmul_tn(const Matrix& a, const Matrix& b);
void bm25_accumulate(std::span<const Bm25Term> terms, std::span<const double> doc_lengths,
                     double avg_doc_length, double k1, double b, std::span<double> scores);

/// Single BM25 term contribution for one document.
inline double bm25_term(double idf, double tf, double doc_length, double avg_doc_length,
                        double k1, double b) {
  const double norm = avg_doc_length > 0.0 ? doc_length / avg_doc_length : 0.0;
  return idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
}

}  // namespace autorag::kernels
