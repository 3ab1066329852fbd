#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "cil/data.hpp"
#include "cil/matrix.hpp"
#include "cil/model.hpp"

namespace cil {

// Greedy herding: repeatedly pick the row whose addition brings the running
// mean of the picks closest (L2) to the mean of all rows. Ties go to the
// lowest index. Returns `m` distinct row indices in pick order.
std::vector<std::size_t> herd_select(const Matrix& reps, std::size_t m);

struct ExemplarMemory {
  std::size_t capacity = 0;  // R, exemplars per class
  // Ordered dataset row indices per class id.
  std::map<std::size_t, std::vector<std::size_t>> exemplars;

  std::size_t total() const;
  std::vector<std::size_t> all_indices() const;
};

// Herds exemplars for `classes` from their training rows using the frozen
// network's representations. Other classes keep their lists. With
// `normalize`, representations are L2-normalized before herding.
void rebuild(ExemplarMemory& memory, const Network& net, const Dataset& train,
             std::span<const std::size_t> classes, std::size_t per_class, bool normalize = false);

}  // namespace cil
