#include <cmath>
#include <fstream>

#include "cil/autodiff.hpp"
#include "cil/error.hpp"
#include "cil/model.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cil;

namespace {

NetworkConfig small_config(std::uint64_t seed = 9) {
  NetworkConfig c;
  c.input_dim = 6;
  c.hidden_dims = {10};
  c.rep_dim = 4;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("init is deterministic and follows the parameter layout") {
  const Network a = Network::init(small_config());
  const Network b = Network::init(small_config());
  CHECK(a.snapshot() == b.snapshot());
  CHECK(a.snapshot() != Network::init(small_config(10)).snapshot());

  const auto& p = a.params();
  REQUIRE(p.size() == 6);
  CHECK(p[0].name == "layer0.weight");
  CHECK(p[0].value.rows == 6);
  CHECK(p[0].value.cols == 10);
  CHECK(p[1].name == "layer0.bias");
  CHECK(p[1].value == Matrix(1, 10));
  CHECK(p[2].name == "layer1.weight");
  CHECK(p[4].name == "head.weight");
  CHECK(p[4].value.rows == 0);
  CHECK(p[5].name == "head.scale");
  CHECK(p[5].value(0, 0) == 16.0);
}

TEST_CASE("He-uniform bound") {
  // fan-in 6: every first-layer weight lies in [-1, 1]
  const Network net = Network::init(small_config());
  double largest = 0.0;
  for (double w : net.params()[0].value.data) largest = std::max(largest, std::abs(w));
  CHECK(largest <= 1.0);
  CHECK(largest > 0.8);
  const double bound = std::sqrt(6.0 / 10.0);
  for (double w : net.params()[2].value.data) CHECK(std::abs(w) <= bound);
}

TEST_CASE("empty hidden dims give a single linear map") {
  NetworkConfig c = small_config();
  c.hidden_dims = {};
  Network net = Network::init(c);
  CHECK(net.params().size() == 4);
  CHECK(net.params()[0].value.rows == 6);
  CHECK(net.params()[0].value.cols == 4);
  Rng rng(1);
  const Matrix x = testing::random_matrix(3, 6, rng);
  const Matrix reps = net.representations(x);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 6; ++k) acc += x(i, k) * net.params()[0].value(k, j);
      CHECK(reps(i, j) == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("invalid configs") {
  NetworkConfig c = small_config();
  c.rep_dim = 1;
  CHECK_THROWS_AS(Network::init(c), ConfigError);
  c = small_config();
  c.input_dim = 0;
  CHECK_THROWS_AS(Network::init(c), ConfigError);
  c = small_config();
  c.hidden_dims = {0};
  CHECK_THROWS_AS(Network::init(c), ConfigError);
  c = small_config();
  c.head_scale_init = 0.0;
  CHECK_THROWS_AS(Network::init(c), ConfigError);
}

TEST_CASE("forward: cosine logits") {
  Network net = Network::init(small_config());
  net.extend_head(3);
  Rng rng(4);
  const Matrix x = testing::random_matrix(5, 6, rng, 3.0);
  const auto [reps, logits] = net.infer(x);
  CHECK(logits.rows == 5);
  CHECK(logits.cols == 3);
  const Matrix& w = net.params()[4].value;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      double dot = 0.0, nr = 0.0, nw = 0.0;
      for (std::size_t j = 0; j < 4; ++j) {
        dot += reps(i, j) * w(c, j);
        nr += reps(i, j) * reps(i, j);
        nw += w(c, j) * w(c, j);
      }
      CHECK(logits(i, c) == doctest::Approx(16.0 * dot / std::sqrt(nr * nw)).epsilon(1e-10));
      CHECK(std::abs(logits(i, c)) <= 16.0);
    }
}

TEST_CASE("forward: logits invariant to positive rescaling of a representation") {
  // With no hidden layers and zero bias, scaling the input scales the
  // representation.
  NetworkConfig c = small_config();
  c.hidden_dims = {};
  Network net = Network::init(c);
  net.extend_head(3);
  Rng rng(5);
  Matrix x = testing::random_matrix(1, 6, rng);
  Matrix scaled = x;
  for (double& v : scaled.data) v *= 7.5;
  const Matrix a = net.infer(x).second, b = net.infer(scaled).second;
  CHECK(testing::max_abs_diff(a, b) < 1e-12);
}

TEST_CASE("forward: single row matches the same row in a batch") {
  Network net = Network::init(small_config());
  net.extend_head(2);
  Rng rng(6);
  const Matrix x = testing::random_matrix(4, 6, rng);
  const Matrix batch = net.infer(x).second;
  const std::vector<std::size_t> third{2};
  const Matrix single = net.infer(gather_rows(x, third)).second;
  CHECK(single.data[0] == batch(2, 0));
  CHECK(single.data[1] == batch(2, 1));
}

TEST_CASE("forward: errors") {
  Network net = Network::init(small_config());
  CHECK_THROWS_AS(net.infer(Matrix(2, 6)), StateError);
  net.extend_head(1);
  CHECK_THROWS_AS(net.infer(Matrix(2, 5)), DimensionError);
}

TEST_CASE("extend_head is append-only") {
  Network net = Network::init(small_config());
  net.extend_head(0);
  CHECK(net.num_classes() == 0);
  net.extend_head(6);
  Rng rng(8);
  const Matrix x = testing::random_matrix(5, 6, rng);
  const Matrix before = net.infer(x).second;
  const Matrix head_before = net.params()[4].value;
  net.extend_head(2);
  CHECK(net.num_classes() == 8);
  const Matrix after = net.infer(x).second;
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(net.params()[4].value(r, j) == head_before(r, j));
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 6; ++c) CHECK(after(i, c) == before(i, c));
}

TEST_CASE("head rows do not depend on how they were added") {
  Network a = Network::init(small_config());
  Network b = Network::init(small_config());
  a.extend_head(5);
  b.extend_head(2);
  b.extend_head(3);
  CHECK(a.params()[4].value == b.params()[4].value);
}

TEST_CASE("snapshot and restore") {
  Network net = Network::init(small_config());
  net.extend_head(3);
  Rng rng(12);
  const Matrix x = testing::random_matrix(4, 6, rng);
  const Snapshot snap = net.snapshot();
  const Network restored = Network::restore(snap);
  CHECK(restored.frozen());
  CHECK(restored.infer(x).second == net.infer(x).second);

  net.mutable_params()[0].value.data[0] += 1.0;
  CHECK(restored.params()[0].value == snap.params[0].value);
  CHECK(restored.infer(x).second != net.infer(x).second);
}

TEST_CASE("frozen networks reject mutation") {
  Network net = Network::init(small_config());
  net.extend_head(2);
  Network frozen = Network::restore(net.snapshot());
  CHECK_THROWS_AS(frozen.extend_head(1), StateError);
  CHECK_THROWS_AS(frozen.mutable_params(), StateError);
  Sgd opt(0.9, 0.0);
  std::vector<Matrix> grads;
  for (const auto& p : frozen.params()) grads.emplace_back(p.value.rows, p.value.cols, 1.0);
  CHECK_THROWS_AS(opt.step(frozen, grads, 0.1), StateError);
  // A frozen network binds its parameters as constants.
  ad::Graph g;
  for (const auto& v : frozen.bind(g, true)) CHECK_FALSE(v.requires_grad());
}

TEST_CASE("snapshot file round trip is exact") {
  Network net = Network::init(small_config());
  net.extend_head(4);
  // Values that need all 17 digits.
  net.mutable_params()[1].value.data[0] = 0.1 + 0.2;
  net.mutable_params()[1].value.data[1] = -1.0 / 3.0;
  net.mutable_params()[1].value.data[2] = 5e-324;
  const auto dir = testing::scratch_dir("snapshot");
  const Snapshot snap = net.snapshot();
  snap.save(dir / "m.snapshot");
  const Snapshot loaded = Snapshot::load(dir / "m.snapshot");
  CHECK(loaded == snap);

  snap.save(dir / "again.snapshot");
  std::ifstream a(dir / "m.snapshot"), b(dir / "again.snapshot");
  const std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("snapshot load errors") {
  const auto dir = testing::scratch_dir("snapshot_bad");
  CHECK_THROWS_AS(Snapshot::load(dir / "missing"), ParseError);
  {
    std::ofstream(dir / "bad") << "not a snapshot\n";
  }
  CHECK_THROWS_AS(Snapshot::load(dir / "bad"), ParseError);
  Network net = Network::init(small_config());
  net.snapshot().save(dir / "ok");
  std::ifstream in(dir / "ok");
  std::string content((std::istreambuf_iterator<char>(in)), {});
  content.replace(content.rfind(' '), std::string::npos, " abc\n");
  {
    std::ofstream(dir / "corrupt") << content;
  }
  CHECK_THROWS_AS(Snapshot::load(dir / "corrupt"), ParseError);
}

TEST_CASE("restore rejects mismatched layouts") {
  Network net = Network::init(small_config());
  Snapshot snap = net.snapshot();
  snap.params.pop_back();
  CHECK_THROWS_AS(Network::restore(snap), DimensionError);
}

TEST_CASE("sgd momentum update") {
  NetworkConfig c = small_config();
  c.hidden_dims = {};
  Network net = Network::init(c);
  net.extend_head(1);
  const auto w0 = net.params()[0].value;
  std::vector<Matrix> grads;
  for (const auto& p : net.params()) grads.emplace_back(p.value.rows, p.value.cols, 1.0);
  Sgd opt(0.5, 0.0);
  opt.step(net, grads, 0.1);  // v = 1, w -= 0.1
  opt.step(net, grads, 0.1);  // v = 1.5, w -= 0.15
  for (std::size_t i = 0; i < w0.data.size(); ++i)
    CHECK(net.params()[0].value.data[i] == doctest::Approx(w0.data[i] - 0.25).epsilon(1e-14));

  Network decay = Network::init(c);
  decay.extend_head(1);
  std::vector<Matrix> zero;
  for (const auto& p : decay.params()) zero.emplace_back(p.value.rows, p.value.cols, 0.0);
  Sgd wd(0.0, 0.5);
  wd.step(decay, zero, 0.1);  // w -= 0.1 * 0.5 w
  for (std::size_t i = 0; i < w0.data.size(); ++i)
    CHECK(decay.params()[0].value.data[i] == doctest::Approx(0.95 * w0.data[i]).epsilon(1e-14));
}

TEST_CASE("network gradients match finite differences") {
  NetworkConfig c = small_config();
  Network net = Network::init(c);
  net.extend_head(3);
  Rng rng(31);
  const Matrix x = testing::random_matrix(5, 6, rng);
  const std::vector<std::size_t> labels{0, 1, 2, 0, 1};
  std::vector<Matrix> inputs;
  for (const auto& p : net.params()) inputs.push_back(p.value);
  // Nudge biases off zero so no hidden unit sits exactly at the ReLU kink.
  for (double& b : inputs[1].data) b = 0.05 * rng.normal();

  auto loss = [&](const std::vector<Matrix>& params, std::vector<Matrix>* grads) {
    ad::Graph g;
    std::vector<ad::Var> vars;
    for (const auto& m : params) vars.push_back(grads ? g.parameter(m) : g.constant(m));
    auto out = net.forward(vars, g.constant(x));
    ad::Var l = ad::softmax_cross_entropy(out.logits, labels);
    if (grads) {
      g.backward(l);
      for (const auto& v : vars) grads->push_back(v.grad_matrix());
    }
    return l.item();
  };
  std::vector<Matrix> analytic;
  loss(inputs, &analytic);
  // Some first-layer coordinates have gradients near 1e-10, where central
  // differences are dominated by round-off; the absolute term covers those.
  const double h = 1e-5;
  for (std::size_t t = 0; t < inputs.size(); ++t)
    for (std::size_t i = 0; i < inputs[t].data.size(); ++i) {
      auto probe = inputs;
      probe[t].data[i] += h;
      const double up = loss(probe, nullptr);
      probe[t].data[i] -= 2 * h;
      const double down = loss(probe, nullptr);
      const double numeric = (up - down) / (2 * h);
      CAPTURE(net.params()[t].name);
      CAPTURE(i);
      CHECK(std::abs(numeric - analytic[t].data[i]) <= 1e-4 * std::abs(numeric) + 1e-9);
    }

  // Parameters whose gradients are well away from zero also pass the strict
  // relative check.
  for (std::size_t t : {std::size_t{4}, std::size_t{5}}) {
    ad::ScalarFn f = [&, t](ad::Graph& g, std::span<const ad::Var> in) {
      std::vector<ad::Var> all;
      for (std::size_t k = 0; k < inputs.size(); ++k) all.push_back(k == t ? in[0] : g.constant(inputs[k]));
      return ad::softmax_cross_entropy(net.forward(all, g.constant(x)).logits, labels);
    };
    CHECK(ad::grad_check(f, {inputs[t]}) < 1e-4);
  }
}
