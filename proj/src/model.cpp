#include "cil/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cil/error.hpp"
#include "cil/io.hpp"
#include "cil/rng.hpp"

namespace cil {

namespace {

constexpr std::uint64_t kHeadStream = 0x4845414400000000ULL;
constexpr const char* kSnapshotMagic = "# cil-snapshot v1";

void fill_he_uniform(Matrix& m, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& w : m.data) w = rng.uniform(-bound, bound);
}

}  // namespace

void NetworkConfig::validate() const {
  if (input_dim == 0) throw ConfigError("network: input_dim must be positive");
  for (auto h : hidden_dims)
    if (h == 0) throw ConfigError("network: hidden dims must be positive");
  if (rep_dim < 2) throw ConfigError("network: rep_dim must be at least 2");
  if (!(head_scale_init > 0.0)) throw ConfigError("network: head_scale_init must be positive");
}

Network Network::init(const NetworkConfig& config) {
  config.validate();
  Network net;
  net.config_ = config;
  Rng rng(config.seed);
  std::vector<std::size_t> dims{config.input_dim};
  dims.insert(dims.end(), config.hidden_dims.begin(), config.hidden_dims.end());
  dims.push_back(config.rep_dim);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Param w{"layer" + std::to_string(i) + ".weight", Matrix(dims[i], dims[i + 1])};
    fill_he_uniform(w.value, dims[i], rng);
    net.params_.push_back(std::move(w));
    net.params_.push_back({"layer" + std::to_string(i) + ".bias", Matrix(1, dims[i + 1])});
  }
  net.params_.push_back({"head.weight", Matrix(0, config.rep_dim)});
  net.params_.push_back({"head.scale", Matrix(1, 1, config.head_scale_init)});
  return net;
}

void Network::extend_head(std::size_t count) {
  if (frozen_) throw StateError("extend_head: network is frozen");
  auto& head = params_[head_index()].value;
  const std::size_t d = config_.rep_dim;
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t row = head.rows;
    Rng rng(derive_seed(config_.seed, kHeadStream + row));
    Matrix w(1, d);
    fill_he_uniform(w, d, rng);
    head.data.insert(head.data.end(), w.data.begin(), w.data.end());
    ++head.rows;
  }
}

std::vector<Param>& Network::mutable_params() {
  if (frozen_) throw StateError("network is frozen");
  return params_;
}

std::vector<ad::Var> Network::bind(ad::Graph& g, bool trainable) const {
  std::vector<ad::Var> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(trainable && !frozen_ ? g.parameter(p.value) : g.constant(p.value));
  return out;
}

ad::Var Network::represent(std::span<const ad::Var> bound, ad::Var batch) const {
  if (batch.shape().cols != config_.input_dim)
    throw DimensionError("forward: batch " + ad::to_string(batch.shape()) + " vs input_dim " +
                         std::to_string(config_.input_dim));
  ad::Var h = batch;
  const std::size_t layers = layer_count();
  for (std::size_t i = 0; i < layers; ++i) {
    h = ad::add_bias(ad::matmul(h, bound[2 * i]), bound[2 * i + 1]);
    if (i + 1 < layers) h = ad::relu(h);
  }
  return h;
}

ForwardResult Network::forward(std::span<const ad::Var> bound, ad::Var batch) const {
  if (num_classes() == 0) throw StateError("forward: classifier has no classes");
  ad::Var reps = represent(bound, batch);
  ad::Var cosine = ad::matmul_nt(ad::row_normalize(reps), ad::row_normalize(bound[head_index()]));
  return {reps, ad::scale_by(cosine, bound[scale_index()])};
}

Matrix Network::representations(const Matrix& batch) const {
  ad::Graph g;
  auto bound = bind(g, false);
  return represent(bound, g.constant(batch)).to_matrix();
}

std::pair<Matrix, Matrix> Network::infer(const Matrix& batch) const {
  ad::Graph g;
  auto bound = bind(g, false);
  auto out = forward(bound, g.constant(batch));
  return {out.reps.to_matrix(), out.logits.to_matrix()};
}

Snapshot Network::snapshot() const { return Snapshot{config_, num_classes(), params_}; }

Network Network::restore(const Snapshot& snap, bool frozen) {
  Network net = Network::init(snap.config);
  if (snap.params.size() != net.params_.size())
    throw DimensionError("restore: snapshot has " + std::to_string(snap.params.size()) + " arrays, expected " +
                         std::to_string(net.params_.size()));
  for (std::size_t i = 0; i < snap.params.size(); ++i) {
    const auto& src = snap.params[i];
    auto& dst = net.params_[i];
    if (src.name != dst.name || src.value.cols != dst.value.cols ||
        (i != net.head_index() && src.value.rows != dst.value.rows))
      throw DimensionError("restore: parameter '" + src.name + "' does not match the network layout");
    dst.value = src.value;
  }
  net.frozen_ = frozen;
  return net;
}

// Text format: magic line, one JSON header line, then one line per array:
//   <name> <rows> <cols> <v0> <v1> ...
// Values use 17 significant digits, which round-trips IEEE doubles exactly.
void Snapshot::save(const std::filesystem::path& path) const {
  nlohmann::ordered_json header;
  header["input_dim"] = config.input_dim;
  header["hidden_dims"] = config.hidden_dims;
  header["rep_dim"] = config.rep_dim;
  header["head_scale_init"] = config.head_scale_init;
  header["seed"] = config.seed;
  header["num_classes"] = num_classes;
  std::ostringstream os;
  os << kSnapshotMagic << '\n' << header.dump() << '\n';
  for (const auto& p : params) {
    os << p.name << ' ' << p.value.rows << ' ' << p.value.cols;
    for (double v : p.value.data) os << ' ' << format_double(v);
    os << '\n';
  }
  write_atomic(path, os.str());
}

Snapshot Snapshot::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("snapshot: cannot open " + path.string(), 0);
  std::string line;
  if (!std::getline(in, line) || line != kSnapshotMagic) throw ParseError("snapshot: bad magic line", 1);
  if (!std::getline(in, line)) throw ParseError("snapshot: missing header", 2);
  Snapshot snap;
  try {
    auto header = nlohmann::json::parse(line);
    snap.config.input_dim = header.at("input_dim").get<std::size_t>();
    snap.config.hidden_dims = header.at("hidden_dims").get<std::vector<std::size_t>>();
    snap.config.rep_dim = header.at("rep_dim").get<std::size_t>();
    snap.config.head_scale_init = header.at("head_scale_init").get<double>();
    snap.config.seed = header.at("seed").get<std::uint64_t>();
    snap.num_classes = header.at("num_classes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("snapshot: bad header: ") + e.what(), 2);
  }
  std::size_t lineno = 2;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Param p;
    std::size_t rows = 0, cols = 0;
    if (!(ls >> p.name >> rows >> cols)) throw ParseError("snapshot: bad array header", lineno);
    std::vector<double> values;
    values.reserve(rows * cols);
    std::string tok;
    while (ls >> tok) values.push_back(parse_double(tok, lineno));
    if (values.size() != rows * cols) throw ParseError("snapshot: array '" + p.name + "' has wrong length", lineno);
    p.value = Matrix(rows, cols, std::move(values));
    snap.params.push_back(std::move(p));
  }
  return snap;
}

void Sgd::step(Network& net, const std::vector<Matrix>& grads, double lr) {
  auto& params = net.mutable_params();
  if (grads.size() != params.size()) throw DimensionError("sgd: gradient count does not match parameters");
  velocity_.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].value.data;
    const auto& g = grads[i].data;
    if (g.size() != w.size()) throw DimensionError("sgd: gradient shape mismatch for " + params[i].name);
    auto& v = velocity_[i];
    v.resize(w.size(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = momentum_ * v[j] + (g[j] + weight_decay_ * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

}  // namespace cil
