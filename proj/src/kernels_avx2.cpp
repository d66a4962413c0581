// AVX2/FMA variants. This translation unit is compiled with -mavx2 -mfma and is
// only entered after the runtime CPU check in kernels.cpp.
#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "popmap/kernels.hpp"

namespace popmap::kernels::detail {

namespace {

constexpr std::size_t kRows = 4;  // micro-tile rows
constexpr std::size_t kCols = 8;  // micro-tile columns (two ymm of doubles)

// Packs A into row panels of kRows, k-major, zero padded.
void pack_a(std::size_t m, std::size_t k, MatrixView a, std::vector<double>& out) {
  const std::size_t panels = (m + kRows - 1) / kRows;
  out.assign(panels * kRows * k, 0.0);
  for (std::size_t panel = 0; panel < panels; ++panel) {
    double* dst = out.data() + panel * kRows * k;
    const std::size_t rows = std::min(kRows, m - panel * kRows);
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t r = 0; r < rows; ++r) {
        dst[p * kRows + r] = a.at(panel * kRows + r, p);
      }
    }
  }
}

// Packs columns [j0, j0 + kCols) of B, k-major, zero padded.
void pack_b(std::size_t n, std::size_t k, std::size_t j0, MatrixView b, double* dst) {
  const std::size_t cols = std::min(kCols, n - j0);
  if (!b.transposed && cols == kCols) {
    for (std::size_t p = 0; p < k; ++p) {
      std::memcpy(dst + p * kCols, b.data + p * b.ld + j0, kCols * sizeof(double));
    }
    return;
  }
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t c = 0; c < kCols; ++c) {
      dst[p * kCols + c] = c < cols ? b.at(p, j0 + c) : 0.0;
    }
  }
}

void micro_kernel(std::size_t k, const double* ap, const double* bp, double* tile) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < k; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp + p * kCols);
    const __m256d b1 = _mm256_loadu_pd(bp + p * kCols + 4);
    const double* av = ap + p * kRows;
    __m256d a = _mm256_broadcast_sd(av + 0);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(av + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(av + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(av + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
  }
  _mm256_storeu_pd(tile + 0, c00);
  _mm256_storeu_pd(tile + 4, c01);
  _mm256_storeu_pd(tile + 8, c10);
  _mm256_storeu_pd(tile + 12, c11);
  _mm256_storeu_pd(tile + 16, c20);
  _mm256_storeu_pd(tile + 20, c21);
  _mm256_storeu_pd(tile + 24, c30);
  _mm256_storeu_pd(tile + 28, c31);
}

double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c,
               std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) {
    return;
  }
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) {
        std::memset(c + i * ldc, 0, n * sizeof(double));
      }
    }
    return;
  }
  thread_local std::vector<double> apack;
  thread_local std::vector<double> bpack;
  pack_a(m, k, a, apack);
  bpack.resize(k * kCols);
  alignas(32) double tile[kRows * kCols];

  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    pack_b(n, k, j0, b, bpack.data());
    const std::size_t cols = std::min(kCols, n - j0);
    for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
      micro_kernel(k, apack.data() + (i0 / kRows) * kRows * k, bpack.data(), tile);
      const std::size_t rows = std::min(kRows, m - i0);
      for (std::size_t r = 0; r < rows; ++r) {
        double* crow = c + (i0 + r) * ldc + j0;
        const double* trow = tile + r * kCols;
        if (cols == kCols) {
          __m256d t0 = _mm256_load_pd(trow);
          __m256d t1 = _mm256_load_pd(trow + 4);
          if (accumulate) {
            t0 = _mm256_add_pd(t0, _mm256_loadu_pd(crow));
            t1 = _mm256_add_pd(t1, _mm256_loadu_pd(crow + 4));
          }
          _mm256_storeu_pd(crow, t0);
          _mm256_storeu_pd(crow + 4, t1);
        } else {
          for (std::size_t cc = 0; cc < cols; ++cc) {
            crow[cc] = accumulate ? crow[cc] + trow[cc] : trow[cc];
          }
        }
      }
    }
  }
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    s += x[i] * y[i];
  }
  return s;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

double sum_sq_diff_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    const __m256d d1 = _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
    acc0 = _mm256_fmadd_pd(d0, d0, acc0);
    acc1 = _mm256_fmadd_pd(d1, d1, acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace popmap::kernels::detail
