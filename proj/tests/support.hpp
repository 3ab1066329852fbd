#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "cil/matrix.hpp"
#include "cil/rng.hpp"

namespace testing {

inline cil::Matrix random_matrix(std::size_t rows, std::size_t cols, cil::Rng& rng, double scale = 1.0) {
  cil::Matrix m(rows, cols);
  for (double& v : m.data) v = scale * rng.normal();
  return m;
}

inline double max_abs_diff(const cil::Matrix& a, const cil::Matrix& b) {
  double out = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) out = std::max(out, std::abs(a.data[i] - b.data[i]));
  return out;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cil_tests_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
