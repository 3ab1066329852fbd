#include "cil/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "cil/error.hpp"

namespace cil {

std::string to_string(CwdMode mode) { return mode == CwdMode::SquaredMean ? "squared-mean" : "frobenius"; }

CwdMode parse_cwd_mode(const std::string& s) {
  if (s == "squared-mean") return CwdMode::SquaredMean;
  if (s == "frobenius") return CwdMode::Frobenius;
  throw ConfigError("unknown cwd mode '" + s + "' (expected squared-mean or frobenius)");
}

CwdResult cwd_loss(ad::Var reps, std::span<const std::size_t> labels, CwdMode mode, double eps) {
  const auto shape = reps.shape();
  if (shape.cols < 2) throw ConfigError("cwd_loss: representation dim must be at least 2");
  if (shape.rows == 0) throw ContractError("cwd_loss: empty batch");
  if (labels.size() != shape.rows) throw DimensionError("cwd_loss: label count does not match batch rows");
  if (!(eps > 0.0)) throw ConfigError("cwd_loss: eps must be positive");

  std::map<std::size_t, std::vector<std::size_t>> rows_of;
  for (std::size_t i = 0; i < labels.size(); ++i) rows_of[labels[i]].push_back(i);

  CwdResult out;
  std::optional<ad::Var> acc;
  for (const auto& [cls, rows] : rows_of) {
    if (rows.size() == 1) {
      ++out.skipped_classes;
      continue;
    }
    ad::Var z = ad::gather_rows(reps, rows);
    ad::Var centered = ad::sub_row(z, ad::col_mean(z));
    ad::Var normalized = ad::div_row(centered, ad::add_scalar(ad::col_std(z), eps));
    ad::Var corr = ad::scale(ad::matmul(ad::transpose(normalized), normalized),
                             1.0 / static_cast<double>(rows.size() - 1));
    ad::Var sq = ad::mul(corr, corr);
    ad::Var term = mode == CwdMode::SquaredMean ? ad::mean(sq) : ad::sqrt(ad::sum(sq));
    acc = acc ? ad::add(*acc, term) : term;
    ++out.contributing_classes;
  }
  out.loss = acc ? *acc : reps.graph()->constant({1, 1}, {0.0});
  return out;
}

namespace {

ad::Var one_minus_cosine(const char* op, ad::Var rep, const Matrix& reference) {
  const auto s = rep.shape();
  if (reference.rows != s.rows || reference.cols != s.cols)
    throw DimensionError(std::string(op) + ": reference shape does not match " + ad::to_string(s));
  for (std::size_t i = 0; i < reference.rows; ++i) {
    double sq = 0.0;
    for (double v : reference.row(i)) sq += v * v;
    if (sq == 0.0) throw ContractError(std::string(op) + ": reference row " + std::to_string(i) + " is zero");
  }
  ad::Var ref = rep.graph()->constant(reference);
  return ad::add_scalar(ad::scale(ad::mean(ad::cosine_rows(rep, ref)), -1.0), 1.0);
}

}  // namespace

ad::Var oracle_mimic_loss(ad::Var rep_student, const Matrix& rep_oracle) {
  return one_minus_cosine("oracle_mimic_loss", rep_student, rep_oracle);
}

ad::Var feature_distill(ad::Var rep_new, const Matrix& rep_teacher) {
  return one_minus_cosine("feature_distill", rep_new, rep_teacher);
}

ad::Var lwf_distill(ad::Var logits_new, const Matrix& logits_teacher, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("lwf_distill: temperature must be positive");
  const auto s = logits_new.shape();
  if (logits_teacher.rows != s.rows || logits_teacher.cols > s.cols || logits_teacher.cols == 0)
    throw DimensionError("lwf_distill: teacher logits do not fit student " + ad::to_string(s));
  const Matrix target = ad::softmax_rows(logits_teacher, temperature);
  ad::Var old_slice = ad::slice_cols(logits_new, 0, logits_teacher.cols);
  return ad::soft_cross_entropy(ad::scale(old_slice, 1.0 / temperature), target);
}

Objective total_objective(const LossParts& parts, const ObjectiveWeights& w, std::size_t phase) {
  if (w.eta < 0.0 || w.beta < 0.0 || w.lambda_d < 0.0)
    throw ConfigError("total_objective: coefficients must be non-negative");
  Objective out;
  out.total = parts.ce;
  out.report.ce = parts.ce.item();

  const bool cwd_active = w.eta > 0.0 && (phase == 0 || w.cwd_all_phases);
  if (cwd_active) {
    if (!parts.cwd) throw ContractError("total_objective: eta > 0 but no CwD term was computed");
    out.total = ad::add(out.total, ad::scale(parts.cwd->loss, w.eta));
    out.report.cwd = parts.cwd->loss.item();
    out.report.cwd_skipped = parts.cwd->skipped_classes;
  }
  if (w.beta > 0.0 && phase == 0) {
    if (!parts.oracle) throw ConfigError("total_objective: beta > 0 requires an oracle snapshot");
    out.total = ad::add(out.total, ad::scale(*parts.oracle, w.beta));
    out.report.oracle = parts.oracle->item();
  }
  if (w.lambda_d > 0.0 && phase >= 1 && parts.distill) {
    out.total = ad::add(out.total, ad::scale(*parts.distill, w.lambda_d));
    out.report.distill = parts.distill->item();
  }
  out.report.total = out.total.item();
  if (!std::isfinite(out.report.total)) throw NumericError("total_objective: non-finite loss");
  return out;
}

double adaptive_distill_weight(double lambda_base, std::size_t old_classes, std::size_t new_classes) {
  if (new_classes == 0) throw ConfigError("adaptive_distill_weight: no new classes");
  return lambda_base * std::sqrt(static_cast<double>(old_classes) / static_cast<double>(new_classes));
}

}  // namespace cil
