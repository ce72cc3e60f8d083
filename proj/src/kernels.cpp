#include "leaprec/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace leaprec::kernels {

namespace {

// Computes C rows [row_begin, row_end). Strides always use the full logical
// dims, so any row partition produces identical results.
void matmul_range(int row_begin, int row_end, int m, int n, int k, const double* a, const double* b, double* c,
                  bool ta, bool tb) {
  for (int i = row_begin; i < row_end; ++i) {
    double* crow = c + static_cast<std::int64_t>(i) * n;
    std::fill(crow, crow + n, 0.0);
    if (!ta && !tb) {
      const double* arow = a + static_cast<std::int64_t>(i) * k;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        const double* brow = b + static_cast<std::int64_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    } else if (!ta && tb) {
      const double* arow = a + static_cast<std::int64_t>(i) * k;
      for (int j = 0; j < n; ++j) {
        const double* brow = b + static_cast<std::int64_t>(j) * k;
        double s = 0.0;
        for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
        crow[j] = s;
      }
    } else if (ta && !tb) {
      for (int p = 0; p < k; ++p) {
        const double av = a[static_cast<std::int64_t>(p) * m + i];
        const double* brow = b + static_cast<std::int64_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    } else {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < k; ++p) {
          s += a[static_cast<std::int64_t>(p) * m + i] * b[static_cast<std::int64_t>(j) * k + p];
        }
        crow[j] = s;
      }
    }
  }
}

}  // namespace

void matmul_serial(int m, int n, int k, const double* a, const double* b, double* c, bool ta, bool tb) {
  matmul_range(0, m, m, n, k, a, b, c, ta, tb);
}

void matmul_omp(int m, int n, int k, const double* a, const double* b, double* c, bool ta, bool tb) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    matmul_range(i, i + 1, m, n, k, a, b, c, ta, tb);
  }
#else
  matmul_serial(m, n, k, a, b, c, ta, tb);
#endif
}

void matmul(int m, int n, int k, const double* a, const double* b, double* c, bool ta, bool tb) {
  const std::int64_t work = static_cast<std::int64_t>(m) * n * k;
  if (work >= (1 << 16) && max_threads() > 1 && m > 1) {
    matmul_omp(m, n, k, a, b, c, ta, tb);
  } else {
    matmul_serial(m, n, k, a, b, c, ta, tb);
  }
}

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void softmax_rows(double* x, int rows, int cols) {
  for (int i = 0; i < rows; ++i) {
    double* row = x + static_cast<std::int64_t>(i) * cols;
    double m = row[0];
    for (int j = 1; j < cols; ++j) m = std::max(m, row[j]);
    double s = 0.0;
    for (int j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - m);
      s += row[j];
    }
    const double inv = 1.0 / s;
    for (int j = 0; j < cols; ++j) row[j] *= inv;
  }
}

void sigmoid_vec(const double* x, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void relu_vec(const double* x, double* y, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void layer_norm_rows(const double* x, const double* gain, const double* shift, double* y, int rows, int cols,
                     double eps) {
  for (int i = 0; i < rows; ++i) {
    const double* xr = x + static_cast<std::int64_t>(i) * cols;
    double* yr = y + static_cast<std::int64_t>(i) * cols;
    double mean = 0.0;
    for (int j = 0; j < cols; ++j) mean += xr[j];
    mean /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= cols;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mean) * inv * gain[j] + shift[j];
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace leaprec::kernels
