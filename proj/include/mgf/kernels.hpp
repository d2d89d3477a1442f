#pragma once

// Data-parallel inner loops behind the tensor ops. Each kernel has a scalar
// reference implementation and an AVX2+FMA variant; the variant is picked once
// at startup from the CPU feature bits (override with MGF_SIMD=scalar|avx2).
// Results are deterministic for a fixed variant, but the two variants differ
// in rounding, so they are compared with a tolerance, never bit-for-bit.

#include <cstddef>
#include <string_view>

namespace mgf::kernels {

enum class Isa { scalar, avx2 };

/// Strided read-only matrix operand: element (i, j) lives at data[i * rs + j * cs].
struct MatRef {
  const double* data;
  std::ptrdiff_t rs;
  std::ptrdiff_t cs;
};

/// C (m x n, row stride ldc) = A (m x k) * B (k x n), or += when accumulate is set.
using GemmFn = void (*)(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c,
                        std::ptrdiff_t ldc, bool accumulate);
using DotFn = double (*)(const double* x, const double* y, std::size_t n);
using AxpyFn = void (*)(double alpha, const double* x, double* y, std::size_t n);

struct KernelTable {
  Isa isa;
  GemmFn gemm;
  DotFn dot;
  AxpyFn axpy;
};

namespace scalar {
void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c, std::ptrdiff_t ldc,
          bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
bool supported();
void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c, std::ptrdiff_t ldc,
          bool accumulate);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2

const KernelTable& table_for(Isa isa);
const KernelTable& active();
/// Switches the process-wide variant. Not thread-safe; meant for tests and startup.
void set_active(Isa isa);
bool isa_available(Isa isa);
std::string_view isa_name(Isa isa);

inline void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c, std::ptrdiff_t ldc,
                 bool accumulate) {
  active().gemm(m, n, k, a, b, c, ldc, accumulate);
}
inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }

}  // namespace mgf::kernels
