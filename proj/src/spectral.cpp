#include "cil/spectral.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>

#include "cil/error.hpp"
#include "cil/kernels.hpp"

namespace cil::spectral {

namespace {

constexpr double kSymmetryTol = 1e-8;
constexpr double kOffDiagTol = 1e-10;
constexpr int kMaxSweeps = 100;
constexpr double kNegativeTol = 1e-9;

void require_samples(const Matrix& reps) {
  if (reps.rows < 2)
    throw InsufficientSamples("need at least 2 samples, got " + std::to_string(reps.rows));
}

double max_off_diagonal(const Matrix& a) {
  double worst = 0.0;
  for (std::size_t p = 0; p < a.rows; ++p)
    for (std::size_t q = p + 1; q < a.cols; ++q) worst = std::max(worst, std::abs(a(p, q)));
  return worst;
}

// Zeroes a(p, q) with one two-sided rotation.
void rotate(Matrix& a, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows;
  for (std::size_t k = 0; k < n; ++k) {
    const double akp = a(k, p), akq = a(k, q);
    a(k, p) = c * akp - s * akq;
    a(k, q) = s * akp + c * akq;
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double apk = a(p, k), aqk = a(q, k);
    a(p, k) = c * apk - s * aqk;
    a(q, k) = s * apk + c * aqk;
  }
  a(p, q) = 0.0;
  a(q, p) = 0.0;
}

}  // namespace

std::string to_string(Source s) { return s == Source::Covariance ? "covariance" : "correlation"; }

Source parse_source(const std::string& s) {
  if (s == "covariance") return Source::Covariance;
  if (s == "correlation") return Source::Correlation;
  throw ConfigError("unknown spectrum source '" + s + "'");
}

Matrix class_covariance(const Matrix& reps) {
  require_samples(reps);
  Matrix cov(reps.cols, reps.cols);
  kernels::parallel::covariance(reps.data, cov.data, reps.rows, reps.cols);
  return cov;
}

Matrix correlation_matrix(const Matrix& reps, double eps) {
  require_samples(reps);
  const std::size_t n = reps.rows, d = reps.cols;
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += reps(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (reps(i, j) - mean[j]) * (reps(i, j) - mean[j]);
  for (auto& s : sd) s = std::max(std::sqrt(s / static_cast<double>(n - 1)), eps);
  Matrix z(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) z(i, j) = (reps(i, j) - mean[j]) / sd[j];
  return class_covariance(z);
}

std::vector<double> sym_eigenvalues(const Matrix& m) {
  if (m.rows != m.cols) throw DimensionError("sym_eigenvalues: matrix is not square");
  double scale = 1.0;
  for (std::size_t p = 0; p < m.rows; ++p)
    for (std::size_t q = 0; q < m.cols; ++q) {
      if (!std::isfinite(m(p, q))) throw NumericError("sym_eigenvalues: non-finite entry");
      if (std::abs(m(p, q) - m(q, p)) >= kSymmetryTol)
        throw ContractError("sym_eigenvalues: matrix is not symmetric");
      scale = std::max(scale, std::abs(m(p, q)));
    }
  Matrix a = m;
  // Off-diagonal tolerance is relative to the largest entry once it exceeds 1.
  const double tol = kOffDiagTol * scale;
  int sweep = 0;
  while (max_off_diagonal(a) >= tol) {
    if (sweep++ == kMaxSweeps)
      throw NumericError("sym_eigenvalues: no convergence after " + std::to_string(kMaxSweeps) +
                         " sweeps, residual " + std::to_string(max_off_diagonal(a)));
    for (std::size_t p = 0; p + 1 < a.rows; ++p)
      for (std::size_t q = p + 1; q < a.rows; ++q) rotate(a, p, q);
  }
  std::vector<double> eigs(a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) eigs[i] = a(i, i);
  std::sort(eigs.begin(), eigs.end(), std::greater<>());
  return eigs;
}

std::vector<double> clamp_spectrum(std::vector<double> eigs) {
  double top = 1.0;
  for (double v : eigs) top = std::max(top, v);
  for (double& v : eigs) {
    if (v >= 0.0) continue;
    if (v < -kNegativeTol * top)
      throw NumericError("spectrum: eigenvalue " + std::to_string(v) + " is too negative for a PSD estimate");
    v = 0.0;
  }
  return eigs;
}

std::vector<double> alpha_curve(std::span<const double> eigs) {
  double total = 0.0;
  for (double v : eigs) {
    if (v < 0.0) throw ContractError("alpha_curve: negative eigenvalue");
    total += v;
  }
  if (!(total > 0.0)) throw NumericError("alpha_curve: degenerate (all-zero) spectrum");
  std::vector<double> alpha(eigs.size());
  double running = 0.0;
  for (std::size_t k = 0; k < eigs.size(); ++k) {
    running += eigs[k];
    alpha[k] = running / total;
  }
  return alpha;
}

double alpha_at_quarter(std::span<const double> alpha) {
  if (alpha.empty()) throw ContractError("alpha_at_quarter: empty curve");
  const std::size_t k = std::max<std::size_t>(1, alpha.size() / 4);
  return alpha[k - 1];
}

double l_shape(std::span<const double> eigs) {
  if (eigs.empty()) throw ContractError("l_shape: empty spectrum");
  const double d = static_cast<double>(eigs.size());
  const double mean = std::accumulate(eigs.begin(), eigs.end(), 0.0) / d;
  double acc = 0.0;
  for (double v : eigs) acc += (v - mean) * (v - mean);
  return acc / d;
}

double frobenius_sq(const Matrix& m) {
  double acc = 0.0;
  for (double v : m.data) acc += v * v;
  return acc;
}

double proposition1_check(const Matrix& k) {
  const auto eigs = sym_eigenvalues(k);
  const double d = static_cast<double>(eigs.size());
  const double lhs = l_shape(eigs) * d;
  const double rhs = frobenius_sq(k) - d;
  return std::abs(lhs - rhs);
}

double log_volume_proxy(std::span<const double> eigs, double floor) {
  if (!(floor > 0.0)) throw ContractError("log_volume_proxy: floor must be positive");
  double acc = 0.0;
  for (double v : eigs) acc += std::log(std::max(v, floor));
  return acc;
}

double conditional_mi_estimate(std::span<const SpectrumReport> spectra, double floor) {
  if (spectra.empty()) throw ContractError("conditional_mi_estimate: no classes");
  double acc = 0.0;
  for (const auto& s : spectra) acc += log_volume_proxy(s.eigenvalues, floor);
  return acc / static_cast<double>(spectra.size());
}

SpectrumReport spectrum_report(std::size_t class_id, const Matrix& reps, Source source, double floor) {
  SpectrumReport r;
  r.class_id = class_id;
  r.sample_count = reps.rows;
  r.source = source;
  r.log_floor = floor;
  const Matrix k = source == Source::Covariance ? class_covariance(reps) : correlation_matrix(reps);
  r.eigenvalues = clamp_spectrum(sym_eigenvalues(k));
  r.alpha = alpha_curve(r.eigenvalues);
  r.frobenius_sq = frobenius_sq(k);
  r.log_eig_sum = log_volume_proxy(r.eigenvalues, floor);

  if (source == Source::Correlation) {
    const double d = static_cast<double>(k.rows);
    const double trace = std::accumulate(r.eigenvalues.begin(), r.eigenvalues.end(), 0.0);
    if (std::abs(trace - d) > 1e-6 * d)
      throw NumericError("spectrum: correlation eigenvalues sum to " + std::to_string(trace) + ", expected " +
                         std::to_string(k.rows));
    const double residual = proposition1_check(k);
    if (residual >= 1e-8 * d)
      throw NumericError("spectrum: Frobenius/eigenvalue identity residual " + std::to_string(residual));
  }
  return r;
}

std::vector<SpectrumReport> class_spectra(const Matrix& reps, std::span<const std::size_t> labels,
                                          std::span<const std::size_t> classes, Source source, double floor) {
  if (labels.size() != reps.rows) throw DimensionError("class_spectra: label count does not match rows");
  std::vector<SpectrumReport> out(classes.size());
  std::vector<std::exception_ptr> errors(classes.size());
  const auto count = static_cast<std::ptrdiff_t>(classes.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t c = 0; c < count; ++c) {
    try {
      const std::size_t cls = classes[static_cast<std::size_t>(c)];
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cls) rows.push_back(i);
      out[static_cast<std::size_t>(c)] = spectrum_report(cls, gather_rows(reps, rows), source, floor);
    } catch (...) {
      errors[static_cast<std::size_t>(c)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace cil::spectral
