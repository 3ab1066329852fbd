#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "cil/matrix.hpp"

namespace cil {

enum class Split { Train, Test };

struct Dataset {
  Matrix features;                  // [N x input_dim]
  std::vector<std::size_t> labels;  // in [0, num_classes)
  std::size_t num_classes = 0;
  Split split = Split::Train;
  // class_indices[c] lists the rows with label c, ascending.
  std::vector<std::vector<std::size_t>> class_indices;
  // label_map[c] is the label as it appeared in the source file. Identity for
  // generated data.
  std::vector<std::int64_t> label_map;

  static Dataset from_parts(Matrix features, std::vector<std::size_t> labels, std::size_t num_classes,
                            Split split);
  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols; }
};

struct MixtureSpec {
  std::size_t num_classes = 10;
  std::size_t input_dim = 32;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 50;
  double center_scale = 1.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 1;
};

// Class centers ~ U[-center_scale, center_scale]^dim, samples = center +
// N(0, noise_scale^2 I). Draw order: all centers, then the training rows class
// by class, then the test rows class by class.
std::pair<Dataset, Dataset> gaussian_mixture(const MixtureSpec& spec);

// Rows "label,f1,...,fd". Labels are remapped to 0..K-1 in ascending order of
// the original values; pass `label_map` to reuse an existing mapping (for a
// test split that must agree with its training split).
Dataset load_csv(const std::filesystem::path& path, Split split = Split::Train,
                 const std::vector<std::int64_t>* label_map = nullptr);
void save_csv(const Dataset& data, const std::filesystem::path& path);

struct PhasePlan {
  std::vector<std::size_t> order;  // shuffled class ids
  std::size_t initial = 0;         // B
  std::size_t increment = 0;       // S
  std::vector<std::vector<std::size_t>> phases;

  // Position of each class id in `order`, i.e. its classifier row.
  std::vector<std::size_t> positions() const;
};

// Fisher-Yates shuffle of 0..num_classes-1 (i from n-1 down to 1, swap with
// Rng::below(i + 1)), then B classes for phase 0 and S per later phase.
PhasePlan make_phase_plan(std::size_t num_classes, std::size_t initial, std::size_t increment,
                          std::uint64_t shuffle_seed = 1993);

}  // namespace cil
