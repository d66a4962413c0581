#include "popmap/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

namespace popmap::kernels {

namespace detail {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, MatrixView a, MatrixView b, double* c,
                 std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    if (!accumulate) {
      std::memset(crow, 0, n * sizeof(double));
    }
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.at(i, p);
      if (aip == 0.0) {
        continue;
      }
      if (!b.transposed) {
        const double* brow = b.data + p * b.ld;
        for (std::size_t j = 0; j < n; ++j) {
          crow[j] += aip * brow[j];
        }
      } else {
        for (std::size_t j = 0; j < n; ++j) {
          crow[j] += aip * b.data[j * b.ld + p];
        }
      }
    }
  }
}

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += x[i] * y[i];
  }
  return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

double sum_sq_diff_scalar(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - y[i];
    s += d * d;
  }
  return s;
}

}  // namespace detail

const KernelTable& scalar_table() {
  static const KernelTable table{Isa::scalar, detail::gemm_scalar, detail::dot_scalar,
                                 detail::axpy_scalar, detail::sum_sq_diff_scalar};
  return table;
}

const KernelTable* avx2_table() {
#if defined(POPMAP_HAVE_AVX2)
  static const bool supported = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  static const KernelTable table{Isa::avx2, detail::gemm_avx2, detail::dot_avx2, detail::axpy_avx2,
                                 detail::sum_sq_diff_avx2};
  return supported ? &table : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& active() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("POPMAP_SIMD");
    if (forced != nullptr && std::string(forced) == "scalar") {
      return scalar_table();
    }
    if (const KernelTable* simd = avx2_table()) {
      return *simd;
    }
    return scalar_table();
  }();
  return table;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace popmap::kernels
