// Compiled with -mavx2 -mfma; only reached after avx2::supported() returns true.

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "mgf/kernels.hpp"

namespace mgf::kernels::avx2 {

namespace {

constexpr std::size_t kMR = 6;
constexpr std::size_t kNR = 8;
constexpr std::size_t kKC = 256;
constexpr std::size_t kMC = 72;
constexpr std::size_t kNC = 4096;

inline const double* at(const MatRef& m, std::size_t i, std::size_t j) {
  return m.data + static_cast<std::ptrdiff_t>(i) * m.rs + static_cast<std::ptrdiff_t>(j) * m.cs;
}

// Packs an mc x kc block of A into MR-row strips, zero-padding the tail strip.
void pack_a(const MatRef& a, std::size_t i0, std::size_t mc, std::size_t p0, std::size_t kc, double* out) {
  for (std::size_t is = 0; is < mc; is += kMR) {
    const std::size_t rows = std::min(kMR, mc - is);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t ii = 0; ii < rows; ++ii) out[p * kMR + ii] = *at(a, i0 + is + ii, p0 + p);
      for (std::size_t ii = rows; ii < kMR; ++ii) out[p * kMR + ii] = 0.0;
    }
    out += kc * kMR;
  }
}

// Packs a kc x nc block of B into NR-column strips, zero-padding the tail strip.
void pack_b(const MatRef& b, std::size_t p0, std::size_t kc, std::size_t j0, std::size_t nc, double* out) {
  for (std::size_t js = 0; js < nc; js += kNR) {
    const std::size_t cols = std::min(kNR, nc - js);
    for (std::size_t p = 0; p < kc; ++p) {
      const double* src = at(b, p0 + p, j0 + js);
      double* dst = out + p * kNR;
      if (b.cs == 1 && cols == kNR) {
        std::memcpy(dst, src, kNR * sizeof(double));
      } else {
        for (std::size_t jj = 0; jj < cols; ++jj) dst[jj] = src[static_cast<std::ptrdiff_t>(jj) * b.cs];
        for (std::size_t jj = cols; jj < kNR; ++jj) dst[jj] = 0.0;
      }
    }
    out += kc * kNR;
  }
}

// 6x8 register tile: acc = sum_p ap[p, :] (x) bp[p, :]; then C (+)= acc on the valid rows/cols.
void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* c, std::ptrdiff_t ldc, std::size_t rows,
                  std::size_t cols, bool accumulate) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
  __m256d c40 = _mm256_setzero_pd(), c41 = _mm256_setzero_pd();
  __m256d c50 = _mm256_setzero_pd(), c51 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    __m256d a = _mm256_broadcast_sd(ap + 0);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    a = _mm256_broadcast_sd(ap + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    a = _mm256_broadcast_sd(ap + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    a = _mm256_broadcast_sd(ap + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    a = _mm256_broadcast_sd(ap + 4);
    c40 = _mm256_fmadd_pd(a, b0, c40);
    c41 = _mm256_fmadd_pd(a, b1, c41);
    a = _mm256_broadcast_sd(ap + 5);
    c50 = _mm256_fmadd_pd(a, b0, c50);
    c51 = _mm256_fmadd_pd(a, b1, c51);
    ap += kMR;
    bp += kNR;
  }
  alignas(32) double tile[kMR * kNR];
  _mm256_store_pd(tile + 0, c00);
  _mm256_store_pd(tile + 4, c01);
  _mm256_store_pd(tile + 8, c10);
  _mm256_store_pd(tile + 12, c11);
  _mm256_store_pd(tile + 16, c20);
  _mm256_store_pd(tile + 20, c21);
  _mm256_store_pd(tile + 24, c30);
  _mm256_store_pd(tile + 28, c31);
  _mm256_store_pd(tile + 32, c40);
  _mm256_store_pd(tile + 36, c41);
  _mm256_store_pd(tile + 40, c50);
  _mm256_store_pd(tile + 44, c51);
  for (std::size_t i = 0; i < rows; ++i) {
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    const double* t = tile + i * kNR;
    if (accumulate) {
      for (std::size_t j = 0; j < cols; ++j) crow[j] += t[j];
    } else {
      for (std::size_t j = 0; j < cols; ++j) crow[j] = t[j];
    }
  }
}

}  // namespace

bool supported() { return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"); }

void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c, std::ptrdiff_t ldc,
          bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + static_cast<std::ptrdiff_t>(i) * ldc, n, 0.0);
    return;
  }
  thread_local std::vector<double> abuf;
  thread_local std::vector<double> bbuf;
  abuf.resize(kMC * kKC);
  bbuf.resize(kKC * kNC);
  for (std::size_t jc = 0; jc < n; jc += kNC) {
    const std::size_t nc = std::min(kNC, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKC) {
      const std::size_t kc = std::min(kKC, k - pc);
      const bool acc = accumulate || pc > 0;
      pack_b(b, pc, kc, jc, nc, bbuf.data());
      for (std::size_t ic = 0; ic < m; ic += kMC) {
        const std::size_t mc = std::min(kMC, m - ic);
        pack_a(a, ic, mc, pc, kc, abuf.data());
        for (std::size_t jr = 0; jr < nc; jr += kNR) {
          const std::size_t cols = std::min(kNR, nc - jr);
          const double* bp = bbuf.data() + (jr / kNR) * kc * kNR;
          for (std::size_t ir = 0; ir < mc; ir += kMR) {
            const std::size_t rows = std::min(kMR, mc - ir);
            const double* ap = abuf.data() + (ir / kMR) * kc * kMR;
            double* ctile = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + static_cast<std::ptrdiff_t>(jc + jr);
            micro_kernel(kc, ap, bp, ctile, ldc, rows, cols, acc);
          }
        }
      }
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, _mm256_add_pd(s0, s1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mgf::kernels::avx2
