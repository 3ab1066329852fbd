#pragma once

// Geometry of per-class representation clouds: covariance and correlation
// estimates, a Jacobi eigensolver, eigenvalue-dominance curves and the
// log-eigenvalue information/volume proxies.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cil/matrix.hpp"

namespace cil::spectral {

enum class Source { Covariance, Correlation };
std::string to_string(Source s);
Source parse_source(const std::string& s);

inline constexpr double kLogFloor = 1e-8;
// Guard added to the standard deviation when forming a correlation matrix for
// analysis. Much smaller than the training-time CwD guard so that the
// diagonal stays within 1e-6 of one.
inline constexpr double kCorrelationEps = 1e-10;

struct SpectrumReport {
  std::size_t class_id = 0;
  std::size_t sample_count = 0;
  Source source = Source::Covariance;
  std::vector<double> eigenvalues;  // descending, clamped at 0
  std::vector<double> alpha;        // cumulative share of the spectrum
  double frobenius_sq = 0.0;        // ||K||_F^2
  double log_eig_sum = 0.0;         // sum_i log max(lambda_i, floor)
  double log_floor = kLogFloor;
};

// Unbiased covariance of the rows of `reps`; n >= 2.
Matrix class_covariance(const Matrix& reps);
// Covariance of rows standardized per dimension (centered, divided by the
// unbiased std floored at eps, so every non-constant dimension has a unit
// diagonal).
Matrix correlation_matrix(const Matrix& reps, double eps = kCorrelationEps);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
std::vector<double> sym_eigenvalues(const Matrix& m);

// Clamps entries in [-tol, 0) to zero; anything more negative is an error.
std::vector<double> clamp_spectrum(std::vector<double> eigs);

std::vector<double> alpha_curve(std::span<const double> eigs);
// alpha_k at k = max(1, d / 4).
double alpha_at_quarter(std::span<const double> alpha);
double l_shape(std::span<const double> eigs);
double frobenius_sq(const Matrix& m);

// |sum_i (lambda_i - mean)^2 - (||K||_F^2 - d)| for a correlation matrix K.
double proposition1_check(const Matrix& k);

double log_volume_proxy(std::span<const double> eigs, double floor = kLogFloor);
// Class-averaged sum of log eigenvalues. Only differences between runs are
// meaningful: additive and multiplicative constants are dropped.
double conditional_mi_estimate(std::span<const SpectrumReport> spectra, double floor = kLogFloor);

SpectrumReport spectrum_report(std::size_t class_id, const Matrix& reps, Source source,
                               double floor = kLogFloor);

// One report per class in `classes`, computed from the rows of `reps` whose
// label matches. Classes are processed in parallel.
std::vector<SpectrumReport> class_spectra(const Matrix& reps, std::span<const std::size_t> labels,
                                          std::span<const std::size_t> classes, Source source,
                                          double floor = kLogFloor);

}  // namespace cil::spectral
