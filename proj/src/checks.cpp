#include "cil/checks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cil/autodiff.hpp"
#include "cil/objectives.hpp"
#include "cil/spectral.hpp"

namespace cil::checks {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  for (std::size_t i = n - 1; i > 0; --i) std::swap(labels[i], labels[rng.below(i + 1)]);
  return labels;
}

}  // namespace

std::vector<GradCheckResult> loss_gradient_suite(std::size_t trials, std::uint64_t seed) {
  using namespace cil::ad;
  std::vector<GradCheckResult> out;
  auto run = [&](const std::string& name, std::uint64_t stream, auto&& make) {
    GradCheckResult r{name, trials, 0.0};
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng(derive_seed(seed, stream * 1000 + t));
      auto [fn, inputs] = make(rng);
      r.max_error = std::max(r.max_error, grad_check(fn, inputs));
    }
    out.push_back(r);
  };

  for (CwdMode mode : {CwdMode::SquaredMean, CwdMode::Frobenius}) {
    run("cwd_loss/" + to_string(mode), mode == CwdMode::SquaredMean ? 1 : 2, [mode](Rng& rng) {
      auto labels = random_labels(16, 3, rng);
      ScalarFn fn = [labels, mode](Graph&, std::span<const Var> in) { return cwd_loss(in[0], labels, mode).loss; };
      return std::pair{fn, std::vector<Matrix>{random_matrix(16, 8, rng)}};
    });
  }
  run("oracle_mimic_loss", 3, [](Rng& rng) {
    Matrix reference = random_matrix(8, 6, rng);
    ScalarFn fn = [reference](Graph&, std::span<const Var> in) { return oracle_mimic_loss(in[0], reference); };
    return std::pair{fn, std::vector<Matrix>{random_matrix(8, 6, rng)}};
  });
  run("feature_distill", 4, [](Rng& rng) {
    Matrix teacher = random_matrix(8, 6, rng);
    ScalarFn fn = [teacher](Graph&, std::span<const Var> in) { return feature_distill(in[0], teacher); };
    return std::pair{fn, std::vector<Matrix>{random_matrix(8, 6, rng)}};
  });
  run("lwf_distill", 5, [](Rng& rng) {
    Matrix teacher = random_matrix(8, 4, rng, 3.0);
    ScalarFn fn = [teacher](Graph&, std::span<const Var> in) { return lwf_distill(in[0], teacher, 2.0); };
    return std::pair{fn, std::vector<Matrix>{random_matrix(8, 6, rng, 3.0)}};
  });
  run("softmax_cross_entropy", 6, [](Rng& rng) {
    auto labels = random_labels(8, 5, rng);
    ScalarFn fn = [labels](Graph&, std::span<const Var> in) { return softmax_cross_entropy(in[0], labels); };
    return std::pair{fn, std::vector<Matrix>{random_matrix(8, 5, rng, 2.0)}};
  });
  return out;
}

Matrix random_correlation(std::size_t d, std::size_t n, Rng& rng) {
  Matrix x(n, d);
  std::vector<double> scale(d), offset(d);
  for (std::size_t j = 0; j < d; ++j) {
    scale[j] = std::exp(rng.uniform(-2.0, 2.0));
    offset[j] = rng.uniform(-5.0, 5.0);
  }
  // A shared latent factor gives the columns non-trivial correlation.
  for (std::size_t i = 0; i < n; ++i) {
    const double latent = rng.normal();
    for (std::size_t j = 0; j < d; ++j) x(i, j) = offset[j] + scale[j] * (rng.normal() + 0.7 * latent);
  }
  return spectral::correlation_matrix(x);
}

PropositionResult proposition1_sweep(std::size_t min_dim, std::size_t max_dim, std::size_t trials, std::uint64_t seed) {
  PropositionResult r;
  r.trials = trials;
  Rng rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t d = min_dim + rng.below(max_dim - min_dim + 1);
    const std::size_t n = 2 + rng.below(2 * d + 8);
    const Matrix k = random_correlation(d, n, rng);
    const double residual = spectral::proposition1_check(k);
    const auto eigs = spectral::clamp_spectrum(spectral::sym_eigenvalues(k));
    const double trace = std::accumulate(eigs.begin(), eigs.end(), 0.0);
    const auto dd = static_cast<double>(d);
    if (residual / dd > r.max_scaled_residual) {
      r.max_scaled_residual = residual / dd;
      r.worst_dim = d;
    }
    r.max_residual = std::max(r.max_residual, residual);
    r.max_trace_error = std::max(r.max_trace_error, std::abs(trace - dd) / dd);
  }
  return r;
}

}  // namespace cil::checks
