#pragma once
// Dense arithmetic kernels behind the tensor engine and the metrics code.
//
// Every kernel has a portable scalar reference implementation and, on x86-64
// builds, an AVX2/FMA variant. The variant is picked once at startup from the
// CPU feature bits; POPMAP_SIMD=scalar in the environment forces the reference
// path. The two paths agree to rounding (summation order differs), which the
// kernel tests pin down.

#include <cstddef>
#include <span>
#include <string_view>

namespace popmap::kernels {

enum class Isa { scalar, avx2 };

/// Layout of one GEMM operand. `transposed` means the stored matrix is the
/// transpose of the logical operand.
struct MatrixView {
  const double* data;
  std::size_t ld;
  bool transposed = false;

  double at(std::size_t row, std::size_t col) const {
    return transposed ? data[col * ld + row] : data[row * ld + col];
  }
};

/// C[m x n] (+)= A[m x k] * B[k x n]; C is row-major with leading dimension ldc.
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b,
                        double* c, std::size_t ldc, bool accumulate);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);
using SqDiffFn = double (*)(const double* x, const double* y, std::size_t n);

struct KernelTable {
  Isa isa;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
  SqDiffFn sum_sq_diff;
};

const KernelTable& scalar_table();
/// Nullptr when the build or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table();
/// The table in use for this process.
const KernelTable& active();
std::string_view isa_name(Isa isa);

inline void gemm(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c,
                 std::size_t ldc, bool accumulate = false) {
  active().gemm(m, n, k, a, b, c, ldc, accumulate);
}

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}

inline double sum_sq_diff(std::span<const double> x, std::span<const double> y) {
  return active().sum_sq_diff(x.data(), y.data(), x.size());
}

namespace detail {
void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c,
                 std::size_t ldc, bool accumulate);
double dot_scalar(const double* x, const double* y, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
double sum_sq_diff_scalar(const double* x, const double* y, std::size_t n);

#if defined(POPMAP_HAVE_AVX2)
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c,
               std::size_t ldc, bool accumulate);
double dot_avx2(const double* x, const double* y, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
double sum_sq_diff_avx2(const double* x, const double* y, std::size_t n);
#endif
}  // namespace detail

}  // namespace popmap::kernels
