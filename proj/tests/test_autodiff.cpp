#include <cmath>
#include <functional>
#include <limits>

#include "cil/autodiff.hpp"
#include "cil/error.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cil;
using namespace cil::ad;

namespace {

// sum(weights * v): a scalar with a non-uniform upstream gradient.
Var weighted_sum(Graph& g, Var v, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w = testing::random_matrix(v.shape().rows, v.shape().cols, rng);
  return sum(mul(v, g.constant(w)));
}

Matrix positive_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = rng.uniform(0.5, 2.0);
  return m;
}

// A matrix whose entries stay at least 0.1 away from zero.
Matrix away_from_zero(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.data) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 2.0);
  return m;
}

using InputMaker = std::function<std::vector<Matrix>(Rng&)>;

double worst_over_trials(const ScalarFn& f, const InputMaker& make, std::uint64_t seed) {
  double worst = 0.0;
  for (std::uint64_t t = 0; t < 10; ++t) {
    Rng rng(derive_seed(seed, t));
    worst = std::max(worst, grad_check(f, make(rng)));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul forward values") {
  Graph g;
  Var id = g.constant(Matrix::identity(2));
  Var m = g.constant(Matrix(2, 2, {1, 2, 3, 4}));
  CHECK(matmul(id, m).to_matrix() == Matrix(2, 2, {1, 2, 3, 4}));
  Var a = g.constant(Matrix(1, 2, {1, 2}));
  Var b = g.constant(Matrix(2, 1, {3, 4}));
  CHECK(matmul(a, b).item() == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  Var a = g.constant(Matrix(2, 3));
  Var b = g.constant(Matrix(2, 3));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x3]", msg.find("[2x3]") + 1) != std::string::npos);
  }
}

TEST_CASE("gradient of sum(A B) with respect to A is ones * B^T") {
  Rng rng(3);
  const Matrix a = testing::random_matrix(3, 4, rng), b = testing::random_matrix(4, 2, rng);
  Graph g;
  Var va = g.parameter(a);
  Var vb = g.constant(b);
  g.backward(sum(matmul(va, vb)));
  const Matrix ga = va.grad_matrix();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) CHECK(ga(i, k) == doctest::Approx(b(k, 0) + b(k, 1)).epsilon(1e-14));
  ScalarFn f = [](Graph&, std::span<const Var> in) { return sum(matmul(in[0], in[1])); };
  CHECK(grad_check(f, {a, b}) < 1e-6);
}

TEST_CASE("relu values and subgradient") {
  Graph g;
  Var x = g.parameter(Matrix(1, 3, {-1, 0, 2}));
  Var y = relu(x);
  CHECK(y.to_matrix() == Matrix(1, 3, {0, 0, 2}));
  g.backward(sum(y));
  CHECK(x.grad_matrix() == Matrix(1, 3, {0, 0, 1}));

  Graph h;
  Var p = h.parameter(Matrix(1, 2, {3, -3}));
  h.backward(sum(relu(p)));
  CHECK(p.grad_matrix() == Matrix(1, 2, {1, 0}));

  Graph k;
  Var n = k.parameter(Matrix(2, 2, {-1, -2, -3, -4}));
  Var r = relu(n);
  k.backward(sum(r));
  CHECK(r.to_matrix() == Matrix(2, 2));
  CHECK(n.grad_matrix() == Matrix(2, 2));
}

TEST_CASE("softmax cross-entropy values") {
  Graph g;
  std::vector<std::size_t> label{0};
  CHECK(softmax_cross_entropy(g.constant(Matrix(1, 2, {0, 0})), label).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const double big = softmax_cross_entropy(g.constant(Matrix(1, 2, {1000, 0})), label).item();
  CHECK(std::isfinite(big));
  CHECK(big == doctest::Approx(0.0).epsilon(1e-12));
  std::vector<std::size_t> other{1};
  CHECK(softmax_cross_entropy(g.constant(Matrix(1, 2, {1000, 0})), other).item() ==
        doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("softmax cross-entropy rejects out-of-range labels") {
  Graph g;
  std::vector<std::size_t> labels{0, 3};
  CHECK_THROWS_AS(softmax_cross_entropy(g.constant(Matrix(2, 3)), labels), IndexError);
}

TEST_CASE("softmax cross-entropy gradient on random 4x3 input") {
  Rng rng(11);
  std::vector<std::size_t> labels{0, 2, 1, 2};
  ScalarFn f = [&](Graph&, std::span<const Var> in) { return softmax_cross_entropy(in[0], labels); };
  CHECK(grad_check(f, {testing::random_matrix(4, 3, rng)}) < 1e-4);
}

TEST_CASE("backward basics") {
  SUBCASE("sum") {
    Graph g;
    Var w = g.parameter(Matrix(1, 3, {5, -1, 2}));
    g.backward(sum(w));
    CHECK(w.grad_matrix() == Matrix(1, 3, {1, 1, 1}));
  }
  SUBCASE("square") {
    Graph g;
    Var w = g.parameter(Matrix(1, 2, {1, 2}));
    g.backward(sum(mul(w, w)));
    CHECK(w.grad_matrix() == Matrix(1, 2, {2, 4}));
  }
  SUBCASE("diamond graph sums both paths") {
    // loss = sum(3w) + sum(w * w): d/dw = 3 + 2w
    Graph g;
    Var w = g.parameter(Matrix(1, 2, {1.5, -2}));
    Var left = scale(w, 3.0);
    Var right = mul(w, w);
    g.backward(add(sum(left), sum(right)));
    CHECK(w.grad_matrix() == Matrix(1, 2, {6, -1}));

    Graph a;
    Var wa = a.parameter(Matrix(1, 2, {1.5, -2}));
    a.backward(sum(scale(wa, 3.0)));
    Graph b;
    Var wb = b.parameter(Matrix(1, 2, {1.5, -2}));
    b.backward(sum(mul(wb, wb)));
    for (std::size_t i = 0; i < 2; ++i) CHECK(w.grad()[i] == wa.grad()[i] + wb.grad()[i]);
  }
  SUBCASE("non-scalar loss") {
    Graph g;
    Var w = g.parameter(Matrix(1, 2, {1, 2}));
    CHECK_THROWS_AS(g.backward(w), ContractError);
  }
  SUBCASE("running backward twice gives the same gradients") {
    Graph g;
    Var w = g.parameter(Matrix(1, 2, {1, 2}));
    Var l = sum(mul(w, w));
    g.backward(l);
    g.backward(l);
    CHECK(w.grad_matrix() == Matrix(1, 2, {2, 4}));
  }
}

TEST_CASE("non-finite values are rejected") {
  Graph g;
  Var w = g.parameter(Matrix(1, 1, {1e200}));
  CHECK_THROWS_AS(mul(w, w), NumericError);
  CHECK_THROWS_AS(g.constant(Matrix(1, 1, {std::numeric_limits<double>::quiet_NaN()})), NumericError);
  ScalarFn f = [](Graph&, std::span<const Var> in) { return sum(in[0]); };
  CHECK_THROWS_AS(grad_check(f, {Matrix(1, 1, {std::numeric_limits<double>::infinity()})}), NumericError);
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(5);
  const Matrix a = testing::random_matrix(6, 5, rng), b = testing::random_matrix(5, 4, rng);
  auto run = [&] {
    Graph g;
    return row_normalize(relu(matmul(g.constant(a), g.constant(b)))).to_matrix();
  };
  CHECK(run() == run());
}

TEST_CASE("grad_check on sum of squares") {
  Rng rng(2);
  ScalarFn f = [](Graph&, std::span<const Var> in) { return sum(mul(in[0], in[0])); };
  CHECK(grad_check(f, {testing::random_matrix(3, 3, rng)}) < 1e-6);
}

TEST_CASE("grad_check detects a wrong gradient") {
  // A custom op whose backward pass is deliberately off by a factor of two.
  ScalarFn f = [](Graph& g, std::span<const Var> in) {
    Var x = in[0];
    std::vector<double> v(x.value().begin(), x.value().end());
    for (double& e : v) e *= 3.0;
    Var y = g.record("bad_scale", x.shape(), v, {x}, [id = x.id()](Graph& gg, const Graph::Node& n) {
      auto buf = gg.grad_buffer(id);
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += 6.0 * n.grad[i];
    });
    return sum(y);
  };
  CHECK(grad_check(f, {Matrix(1, 2, {1, 2})}) > 0.4);
}

TEST_CASE("every primitive passes grad_check on random inputs") {
  struct Case {
    const char* name;
    ScalarFn fn;
    InputMaker make;
  };
  const std::vector<std::size_t> rows{2, 0, 2, 1};
  const std::vector<Case> cases{
      {"matmul", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, matmul(in[0], in[1]), 1); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(4, 2, r)}; }},
      {"matmul_nt", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, matmul_nt(in[0], in[1]), 2); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(5, 4, r)}; }},
      {"transpose", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, transpose(in[0]), 3); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"relu", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, relu(in[0]), 4); },
       [](Rng& r) { return std::vector{away_from_zero(3, 4, r)}; }},
      {"add", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, add(in[0], in[1]), 5); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(3, 4, r)}; }},
      {"sub", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, sub(in[0], in[1]), 6); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(3, 4, r)}; }},
      {"mul", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, mul(in[0], in[1]), 7); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(3, 4, r)}; }},
      {"add_bias", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, add_bias(in[0], in[1]), 8); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(1, 4, r)}; }},
      {"add_scalar", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, add_scalar(in[0], 0.7), 9); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"scale", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, scale(in[0], -1.3), 10); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"scale_by", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, scale_by(in[0], in[1]), 11); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(1, 1, r)}; }},
      {"mean", [](Graph& g, std::span<const Var> in) { return mean(mul(in[0], in[0])); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"sqrt", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, sqrt(in[0]), 12); },
       [](Rng& r) { return std::vector{positive_matrix(3, 4, r)}; }},
      {"gather_rows", [&rows](Graph& g, std::span<const Var> in) { return weighted_sum(g, gather_rows(in[0], rows), 13); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"slice_cols", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, slice_cols(in[0], 1, 3), 14); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"col_mean", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, col_mean(in[0]), 15); },
       [](Rng& r) { return std::vector{testing::random_matrix(5, 4, r)}; }},
      {"col_std", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, col_std(in[0]), 16); },
       [](Rng& r) { return std::vector{testing::random_matrix(5, 4, r)}; }},
      {"sub_row", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, sub_row(in[0], in[1]), 17); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(1, 4, r)}; }},
      {"div_row", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, div_row(in[0], in[1]), 18); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), away_from_zero(1, 4, r)}; }},
      {"row_normalize", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, row_normalize(in[0]), 19); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
      {"cosine_rows", [](Graph& g, std::span<const Var> in) { return weighted_sum(g, cosine_rows(in[0], in[1]), 20); },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r), testing::random_matrix(3, 4, r)}; }},
      {"soft_cross_entropy",
       [](Graph& g, std::span<const Var> in) {
         Rng rng(21);
         return soft_cross_entropy(in[0], softmax_rows(testing::random_matrix(3, 4, rng)));
       },
       [](Rng& r) { return std::vector{testing::random_matrix(3, 4, r)}; }},
  };
  for (std::size_t i = 0; i < cases.size(); ++i) {
    CAPTURE(cases[i].name);
    CHECK(worst_over_trials(cases[i].fn, cases[i].make, 100 + i) < 1e-4);
  }
}

TEST_CASE("col_std needs two rows") {
  Graph g;
  CHECK_THROWS_AS(col_std(g.constant(Matrix(1, 3))), InsufficientSamples);
}

TEST_CASE("col_mean and col_std against direct formulas") {
  Graph g;
  Var x = g.constant(Matrix(3, 2, {1, 10, 2, 20, 6, 60}));
  CHECK(col_mean(x).to_matrix() == Matrix(1, 2, {3, 30}));
  const Matrix sd = col_std(x).to_matrix();
  // deviations -2, -1, 3: sum of squares 14, unbiased variance 7
  CHECK(sd(0, 0) == doctest::Approx(std::sqrt(7.0)).epsilon(1e-15));
  CHECK(sd(0, 1) == doctest::Approx(10.0 * std::sqrt(7.0)).epsilon(1e-15));
}

TEST_CASE("cosine and normalization values") {
  Graph g;
  Var a = g.constant(Matrix(3, 2, {1, 0, 1, 1, 2, 0}));
  Var b = g.constant(Matrix(3, 2, {0, 1, -2, -2, 5, 0}));
  const Matrix c = cosine_rows(a, b).to_matrix();
  CHECK(c(0, 0) == doctest::Approx(0.0));
  CHECK(c(1, 0) == doctest::Approx(-1.0).epsilon(1e-10));
  CHECK(c(2, 0) == doctest::Approx(1.0).epsilon(1e-10));
  const Matrix n = row_normalize(g.constant(Matrix(1, 2, {3, 4}))).to_matrix();
  CHECK(n(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(n(0, 1) == doctest::Approx(0.8).epsilon(1e-14));
}

TEST_CASE("sqrt has zero gradient at zero") {
  Graph g;
  Var x = g.parameter(Matrix(1, 2, {0, 4}));
  g.backward(sum(sqrt(x)));
  CHECK(x.grad_matrix() == Matrix(1, 2, {0, 0.25}));
}

TEST_CASE("softmax_rows with temperature") {
  const Matrix p = softmax_rows(Matrix(1, 2, {2, 0}), 2.0);
  CHECK(p(0, 0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-14));
  CHECK(p(0, 0) + p(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("constants do not receive gradients") {
  Graph g;
  Var c = g.constant(Matrix(1, 2, {1, 2}));
  Var w = g.parameter(Matrix(1, 2, {3, 4}));
  g.backward(sum(mul(c, w)));
  CHECK_FALSE(c.requires_grad());
  CHECK(c.grad().empty());
  CHECK(w.grad_matrix() == Matrix(1, 2, {1, 2}));
}
