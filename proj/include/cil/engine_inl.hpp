#pragma once

#include <omp.h>

#include <exception>
#include <optional>

namespace cil {

template <typename T>
std::vector<T> run_seeds(std::uint64_t base, std::size_t count, const std::function<T(std::uint64_t)>& fn) {
  std::vector<std::optional<T>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  const auto n = static_cast<std::ptrdiff_t>(count);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      slots[static_cast<std::size_t>(i)].emplace(fn(base + static_cast<std::uint64_t>(i)));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  out.reserve(count);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

}  // namespace cil
