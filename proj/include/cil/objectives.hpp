#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "cil/autodiff.hpp"
#include "cil/matrix.hpp"

namespace cil {

// How one class's correlation matrix K is reduced to a penalty.
//   SquaredMean: mean of squared entries of K, ||K||_F^2 / d^2
//   Frobenius:   ||K||_F
enum class CwdMode { SquaredMean, Frobenius };

std::string to_string(CwdMode mode);
CwdMode parse_cwd_mode(const std::string& s);

struct CwdResult {
  ad::Var loss;
  std::size_t contributing_classes = 0;
  std::size_t skipped_classes = 0;  // classes present with a single sample
};

inline constexpr double kCwdEps = 1e-5;

// Class-wise decorrelation penalty on a batch of representations.
//
// For every class with at least two rows in the batch the rows are centered
// and divided by the per-dimension unbiased standard deviation (plus `eps`),
// K = Z^T Z / (n_c - 1) is formed, and the per-class penalty is summed over
// classes. Singleton classes contribute nothing; if no class has two rows the
// result is an exact zero constant.
CwdResult cwd_loss(ad::Var reps, std::span<const std::size_t> labels, CwdMode mode = CwdMode::SquaredMean,
                   double eps = kCwdEps);

// Mean over rows of 1 - cos(student_i, reference_i). The reference is a
// constant; gradients reach the student only.
ad::Var oracle_mimic_loss(ad::Var rep_student, const Matrix& rep_oracle);
ad::Var feature_distill(ad::Var rep_new, const Matrix& rep_teacher);

// Temperature-scaled soft cross-entropy between the teacher's distribution and
// the first C_old student logits.
ad::Var lwf_distill(ad::Var logits_new, const Matrix& logits_teacher, double temperature = 2.0);

struct LossReport {
  double ce = 0.0;
  double cwd = 0.0;
  double distill = 0.0;
  double oracle = 0.0;
  double total = 0.0;
  std::size_t cwd_skipped = 0;
};

struct ObjectiveWeights {
  double eta = 0.0;       // CwD
  double beta = 0.0;      // oracle mimic
  double lambda_d = 0.0;  // distillation
  bool cwd_all_phases = false;
};

struct LossParts {
  ad::Var ce;
  std::optional<CwdResult> cwd;
  std::optional<ad::Var> oracle;
  std::optional<ad::Var> distill;
};

struct Objective {
  ad::Var total;
  LossReport report;
};

// ce + eta * cwd (phase 0, or every phase with cwd_all_phases)
//    + beta * oracle (phase 0) + lambda_d * distill (phases >= 1).
// Terms outside their phase are dropped and reported as 0.
Objective total_objective(const LossParts& parts, const ObjectiveWeights& w, std::size_t phase);

// lambda_base * sqrt(old / new), the adaptive distillation weight.
double adaptive_distill_weight(double lambda_base, std::size_t old_classes, std::size_t new_classes);

}  // namespace cil
