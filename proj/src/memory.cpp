#include "cil/memory.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "cil/error.hpp"

namespace cil {

std::vector<std::size_t> herd_select(const Matrix& reps, std::size_t m) {
  const std::size_t n = reps.rows, d = reps.cols;
  if (m < 1 || m > n)
    throw ContractError("herd_select: need 1 <= m <= n, got m=" + std::to_string(m) + ", n=" + std::to_string(n));
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += reps(i, j);
  for (auto& v : mu) v /= static_cast<double>(n);

  std::vector<double> running(d, 0.0);
  std::vector<bool> taken(n, false);
  std::vector<std::size_t> picks;
  picks.reserve(m);
  for (std::size_t t = 0; t < m; ++t) {
    const double inv = 1.0 / static_cast<double>(t + 1);
    std::size_t best = n;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = mu[j] - (running[j] + reps(i, j)) * inv;
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = i;
      }
    }
    taken[best] = true;
    picks.push_back(best);
    for (std::size_t j = 0; j < d; ++j) running[j] += reps(best, j);
  }
  return picks;
}

std::size_t ExemplarMemory::total() const {
  std::size_t n = 0;
  for (const auto& [cls, rows] : exemplars) n += rows.size();
  return n;
}

std::vector<std::size_t> ExemplarMemory::all_indices() const {
  std::vector<std::size_t> out;
  for (const auto& [cls, rows] : exemplars) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

void rebuild(ExemplarMemory& memory, const Network& net, const Dataset& train,
             std::span<const std::size_t> classes, std::size_t per_class, bool normalize) {
  if (!net.frozen()) throw StateError("rebuild: herding requires a frozen network");
  if (classes.empty()) throw ContractError("rebuild: no classes to herd");
  memory.capacity = per_class;
  for (std::size_t cls : classes) {
    if (cls >= train.num_classes) throw IndexError("rebuild: class " + std::to_string(cls) + " not in dataset");
    const auto& rows = train.class_indices[cls];
    auto& slot = memory.exemplars[cls];
    slot.clear();
    if (per_class == 0 || rows.empty()) continue;
    if (rows.size() < per_class) {
      std::cerr << "warning: class " << cls << " has " << rows.size() << " training samples, fewer than R="
                << per_class << "; keeping all\n";
      slot = rows;
      continue;
    }
    Matrix reps = net.representations(gather_rows(train.features, rows));
    if (normalize) {
      for (std::size_t i = 0; i < reps.rows; ++i) {
        auto r = reps.row(i);
        double sq = 0.0;
        for (double v : r) sq += v * v;
        const double norm = std::max(std::sqrt(sq), 1e-12);
        for (double& v : r) v /= norm;
      }
    }
    for (std::size_t pick : herd_select(reps, per_class)) slot.push_back(rows[pick]);
  }
}

}  // namespace cil
