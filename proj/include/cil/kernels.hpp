#pragma once

// Dense kernels used on the hot paths (matrix products in the autodiff tape,
// per-class covariance estimates).
//
// Every kernel exists twice: `serial::` is the plain reference loop nest and
// `parallel::` is the same loop nest with the outermost output loop split
// across OpenMP threads. Each output element is produced by exactly one thread
// with an identical accumulation order, so the two agree bit-for-bit for any
// thread count. Tests compare them; bench/ times them.
//
// Product kernels accumulate into `c` (c += op(a) * op(b)); callers zero `c`
// first when they want a plain product.

#include <cstddef>
#include <span>

namespace cil::kernels {

namespace serial {
// c[n x m] += a[n x k] * b[k x m]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
// c[n x m] += a[n x k] * b[m x k]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
// c[k x m] += a[n x k]^T * b[n x m]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
// cov[d x d] = unbiased covariance of the n rows of x[n x d]; requires n >= 2.
void covariance(std::span<const double> x, std::span<double> cov, std::size_t n, std::size_t d);
}  // namespace serial

namespace parallel {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t n, std::size_t k, std::size_t m);
void covariance(std::span<const double> x, std::span<double> cov, std::size_t n, std::size_t d);
}  // namespace parallel

// Below this many multiply-adds the parallel kernels stay on one thread.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 15;

}  // namespace cil::kernels
