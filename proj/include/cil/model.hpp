#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cil/autodiff.hpp"
#include "cil/matrix.hpp"

namespace cil {

struct NetworkConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t rep_dim = 32;
  double head_scale_init = 16.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

struct Param {
  std::string name;
  Matrix value;
  bool operator==(const Param&) const = default;
};

// Deep copy of a network's parameters plus the config that shaped them.
struct Snapshot {
  NetworkConfig config;
  std::size_t num_classes = 0;
  std::vector<Param> params;

  void save(const std::filesystem::path& path) const;
  static Snapshot load(const std::filesystem::path& path);
  bool operator==(const Snapshot&) const = default;
};

struct ForwardResult {
  ad::Var reps;    // [n x d], last linear layer, not normalized
  ad::Var logits;  // [n x C], scale * cos(rep, head row)
};

// MLP feature extractor (ReLU between hidden layers, linear representation
// layer) followed by a cosine classifier with a learnable scale.
//
// Parameter layout, in declaration order:
//   layer{i}.weight [in x out], layer{i}.bias [1 x out]  for every layer
//   head.weight [C x d], head.scale [1 x 1]
class Network {
 public:
  // He-uniform weights (bound sqrt(6 / fan_in)), zero biases, scale set to
  // head_scale_init, no classifier rows.
  static Network init(const NetworkConfig& config);

  const NetworkConfig& config() const { return config_; }
  std::size_t num_classes() const { return params_[head_index()].value.rows; }
  bool frozen() const { return frozen_; }
  void freeze() { frozen_ = true; }

  // Appends `count` classifier rows. Row r is always drawn from the same
  // seeded stream, independent of how many rows were added before.
  void extend_head(std::size_t count);

  const std::vector<Param>& params() const { return params_; }
  // Mutable access for optimizers; throws StateError on a frozen network.
  std::vector<Param>& mutable_params();

  // Places the parameters on `g`; as trainable leaves when `trainable`.
  std::vector<ad::Var> bind(ad::Graph& g, bool trainable) const;
  ad::Var represent(std::span<const ad::Var> bound, ad::Var batch) const;
  ForwardResult forward(std::span<const ad::Var> bound, ad::Var batch) const;

  // Tape-free conveniences.
  Matrix representations(const Matrix& batch) const;
  std::pair<Matrix, Matrix> infer(const Matrix& batch) const;

  Snapshot snapshot() const;
  static Network restore(const Snapshot& snap, bool frozen = true);

 private:
  std::size_t head_index() const { return params_.size() - 2; }
  std::size_t scale_index() const { return params_.size() - 1; }
  std::size_t layer_count() const { return (params_.size() - 2) / 2; }

  NetworkConfig config_;
  std::vector<Param> params_;
  bool frozen_ = false;
};

// SGD with heavy-ball momentum: v = mu * v + (g + wd * w); w -= lr * v.
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(Network& net, const std::vector<Matrix>& grads, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace cil
