#pragma once

// Self-checks shared by the command-line tool and the test suites.

#include <cstdint>
#include <string>
#include <vector>

#include "cil/matrix.hpp"
#include "cil/rng.hpp"

namespace cil::checks {

struct GradCheckResult {
  std::string name;
  std::size_t trials = 0;
  double max_error = 0.0;
};

// grad_check on every training loss over `trials` randomized small batches.
std::vector<GradCheckResult> loss_gradient_suite(std::size_t trials, std::uint64_t seed);

// Correlation matrix of n random rows with per-column scale and offset.
Matrix random_correlation(std::size_t d, std::size_t n, Rng& rng);

struct PropositionResult {
  std::size_t trials = 0;
  double max_residual = 0.0;          // |L_shape - (||K||_F^2 - d)|
  double max_scaled_residual = 0.0;   // residual / d
  double max_trace_error = 0.0;       // |sum(lambda) - d| / d
  std::size_t worst_dim = 0;
};

// Random correlation matrices with d drawn uniformly from [min_dim, max_dim].
PropositionResult proposition1_sweep(std::size_t min_dim, std::size_t max_dim, std::size_t trials, std::uint64_t seed);

}  // namespace cil::checks
