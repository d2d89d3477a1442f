#include <algorithm>
#include <vector>

#include "mgf/kernels.hpp"

namespace mgf::kernels::scalar {

void gemm(std::size_t m, std::size_t n, std::size_t k, MatRef a, MatRef b, double* c, std::ptrdiff_t ldc,
          bool accumulate) {
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a.data[static_cast<std::ptrdiff_t>(i) * a.rs + static_cast<std::ptrdiff_t>(p) * a.cs];
      const double* brow = b.data + static_cast<std::ptrdiff_t>(p) * b.rs;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[static_cast<std::ptrdiff_t>(j) * b.cs];
    }
    double* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] += row[j];
    } else {
      for (std::size_t j = 0; j < n; ++j) crow[j] = row[j];
    }
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace mgf::kernels::scalar
