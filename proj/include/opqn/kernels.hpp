#pragma once

#include <cstddef>
#include <cstdint>

#include "opqn/matrix.hpp"

namespace opqn::kern {

double dot(const double* a, const double* b, std::size_t n);

/// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

/// out[k] = <x, column k of a> for every column. out has a.cols entries.
void tmatvec(const ColMat& a, const double* x, double* out);

/// out = sum_k p[k] * column k of a. out has a.rows entries.
void colcomb(const ColMat& a, const double* p, double* out);

/// out = a * b with a dense row-major d x d and b column-major d x K.
/// Parallel over columns of the result.
void matmul_rm_cm(const double* a_rowmajor, std::uint32_t d, const ColMat& b, ColMat& out);

/// max |C^T C - I| over all entries of the Gram matrix.
double max_gram_residual(const ColMat& c);

/// g += X^T U where X is n x d row-major with row stride xstride starting at
/// x0, and U is n x k row-major with row stride ustride starting at u0.
/// Column j of g accumulates sum_i U[i,j] * X[i,:] with i in ascending order;
/// columns are processed in parallel.
void accum_outer(const double* x0, std::size_t xstride, const double* u0, std::size_t ustride,
                 std::size_t n, ColMat& g);

}  // namespace opqn::kern

/// Single-threaded reference implementations with naive index arithmetic.
/// Kept for parity tests of the parallel kernels and for the benchmark.
namespace opqn::ref {

double dot(const double* a, const double* b, std::size_t n);
void tmatvec(const ColMat& a, const double* x, double* out);
void colcomb(const ColMat& a, const double* p, double* out);
void matmul_rm_cm(const double* a_rowmajor, std::uint32_t d, const ColMat& b, ColMat& out);
double max_gram_residual(const ColMat& c);
void accum_outer(const double* x0, std::size_t xstride, const double* u0, std::size_t ustride,
                 std::size_t n, ColMat& g);

/// score[i] = sum_m lut[m*k_words + code(i,m)] over n items of row-major codes.
void score_codes(const std::uint8_t* codes, std::size_t n, std::uint32_t m_books,
                 std::uint32_t code_bytes, const double* lut, std::uint32_t k_words, double* out);

}  // namespace opqn::ref
