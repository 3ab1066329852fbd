#include "cil/kernels.hpp"

#include <omp.h>

#include <vector>

namespace cil::kernels {

namespace {

std::vector<double> column_means(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x[i * d + j];
  for (auto& v : mean) v /= static_cast<double>(n);
  return mean;
}

std::vector<double> centered(std::span<const double> x, std::size_t n, std::size_t d) {
  const auto mean = column_means(x, n, d);
  std::vector<double> xc(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) xc[i * d + j] = x[i * d + j] - mean[j];
  return xc;
}

// One output row of each kernel. Shared by both variants so that the parallel
// path can only differ in how rows are scheduled.
inline void gemm_nn_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                        std::size_t m) {
  double* ci = c + i * m;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + p * m;
    for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
  }
}

inline void gemm_nt_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                        std::size_t m) {
  const double* ai = a + i * k;
  for (std::size_t j = 0; j < m; ++j) {
    const double* bj = b + j * k;
    double sum = 0.0;
    for (std::size_t p = 0; p < k; ++p) sum += ai[p] * bj[p];
    c[i * m + j] += sum;
  }
}

inline void gemm_tn_row(const double* a, const double* b, double* c, std::size_t p, std::size_t n,
                        std::size_t k, std::size_t m) {
  double* cp = c + p * m;
  for (std::size_t i = 0; i < n; ++i) {
    const double aip = a[i * k + p];
    const double* bi = b + i * m;
    for (std::size_t j = 0; j < m; ++j) cp[j] += aip * bi[j];
  }
}

inline void covariance_row(const double* xc, double* cov, std::size_t p, std::size_t n,
                           std::size_t d) {
  const double denom = static_cast<double>(n - 1);
  for (std::size_t q = 0; q < d; ++q) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += xc[i * d + p] * xc[i * d + q];
    cov[p * d + q] = sum / denom;
  }
}

void symmetrize(std::span<double> cov, std::size_t d) {
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p + 1; q < d; ++q) {
      const double avg = 0.5 * (cov[p * d + q] + cov[q * d + p]);
      cov[p * d + q] = avg;
      cov[q * d + p] = avg;
    }
}

}  // namespace

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) gemm_nn_row(a.data(), b.data(), c.data(), i, k, m);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) gemm_nt_row(a.data(), b.data(), c.data(), i, k, m);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) gemm_tn_row(a.data(), b.data(), c.data(), p, n, k, m);
}

void covariance(std::span<const double> x, std::span<double> cov, std::size_t n, std::size_t d) {
  const auto xc = centered(x, n, d);
  for (std::size_t p = 0; p < d; ++p) covariance_row(xc.data(), cov.data(), p, n, d);
  symmetrize(cov, d);
}

}  // namespace serial

namespace parallel {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_nn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, m);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  const auto rows = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelThreshold)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_nt_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(i), k, m);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m) {
  const auto rows = static_cast<std::ptrdiff_t>(k);
#pragma omp parallel for schedule(static) if (n * k * m > kParallelThreshold)
  for (std::ptrdiff_t p = 0; p < rows; ++p)
    gemm_tn_row(a.data(), b.data(), c.data(), static_cast<std::size_t>(p), n, k, m);
}

void covariance(std::span<const double> x, std::span<double> cov, std::size_t n, std::size_t d) {
  const auto xc = centered(x, n, d);
  const auto rows = static_cast<std::ptrdiff_t>(d);
#pragma omp parallel for schedule(static) if (n * d * d > kParallelThreshold)
  for (std::ptrdiff_t p = 0; p < rows; ++p)
    covariance_row(xc.data(), cov.data(), static_cast<std::size_t>(p), n, d);
  symmetrize(cov, d);
}

}  // namespace parallel

}  // namespace cil::kernels
