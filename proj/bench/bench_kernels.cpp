// Times the serial and OpenMP variants of the dense kernels.
//
//   bench_kernels [repeats]

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "cil/kernels.hpp"
#include "cil/rng.hpp"

namespace {

std::vector<double> random_vector(std::size_t n, cil::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

double time_ms(int repeats, const std::function<void()>& fn) {
  fn();
  const auto start = std::chrono::steady_clock::now();
  for (int r = 0; r < repeats; ++r) fn();
  const std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
  return elapsed.count() / repeats;
}

void report(const char* name, std::size_t size, double serial_ms, double parallel_ms, bool equal) {
  std::printf("%-12s %6zu  serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %s\n", name, size, serial_ms,
              parallel_ms, serial_ms / parallel_ms, equal ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  namespace k = cil::kernels;
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  std::printf("threads %d, repeats %d\n", omp_get_max_threads(), repeats);
  cil::Rng rng(7);
  bool all_equal = true;

  for (std::size_t n : {64, 128, 256, 512}) {
    const auto a = random_vector(n * n, rng), b = random_vector(n * n, rng);
    std::vector<double> cs(n * n), cp(n * n);
    const double s = time_ms(repeats, [&] {
      std::fill(cs.begin(), cs.end(), 0.0);
      k::serial::gemm_nn(a, b, cs, n, n, n);
    });
    const double p = time_ms(repeats, [&] {
      std::fill(cp.begin(), cp.end(), 0.0);
      k::parallel::gemm_nn(a, b, cp, n, n, n);
    });
    report("gemm_nn", n, s, p, cs == cp);
    all_equal = all_equal && cs == cp;
  }

  for (std::size_t d : {32, 64, 128, 256}) {
    const std::size_t n = 4 * d;
    const auto x = random_vector(n * d, rng);
    std::vector<double> cs(d * d), cp(d * d);
    const double s = time_ms(repeats, [&] { k::serial::covariance(x, cs, n, d); });
    const double p = time_ms(repeats, [&] { k::parallel::covariance(x, cp, n, d); });
    report("covariance", d, s, p, cs == cp);
    all_equal = all_equal && cs == cp;
  }
  return all_equal ? 0 : 1;
}
