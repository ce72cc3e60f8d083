#pragma once

#include <cstdint>

namespace leaprec::kernels {

// Dense row-major kernels. Each has a serial reference implementation and an
// OpenMP variant; the unsuffixed entry point dispatches on problem size.
// Parallel loops split by output row and every output element is accumulated
// by a single thread in fixed k-order, so results are bit-identical to the
// serial reference for any thread count.

// C(m,n) = op(A) * op(B), op(A) is m x k, op(B) is k x n.
// A is stored (ta ? k x m : m x k), B is stored (tb ? n x k : k x n).
void matmul_serial(int m, int n, int k, const double* a, const double* b, double* c, bool ta, bool tb);
void matmul_omp(int m, int n, int k, const double* a, const double* b, double* c, bool ta, bool tb);
void matmul(int m, int n, int k, const double* a, const double* b, double* c, bool ta, bool tb);

double dot(const double* a, const double* b, int n);

// Row-wise softmax with max subtraction, in place.
void softmax_rows(double* x, int rows, int cols);

// y = sigmoid(x) elementwise.
void sigmoid_vec(const double* x, double* y, std::int64_t n);
void relu_vec(const double* x, double* y, std::int64_t n);

// Per-row layer normalization: y = (x - mean) / sqrt(var + eps) * gain + shift.
void layer_norm_rows(const double* x, const double* gain, const double* shift, double* y, int rows, int cols,
                     double eps);

int max_threads();

}  // namespace leaprec::kernels
