#include "cil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "cil/error.hpp"
#include "cil/kernels.hpp"

namespace cil::ad {

std::string to_string(Shape s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

// ---------------------------------------------------------------- Var

Shape Var::shape() const { return graph_->node(id_).shape; }
std::span<const double> Var::value() const { return graph_->node(id_).value; }
std::span<const double> Var::grad() const { return graph_->node(id_).grad; }
bool Var::requires_grad() const { return graph_->node(id_).requires_grad; }

double Var::item() const {
  if (shape().size() != 1) throw ContractError("item: tensor is " + to_string(shape()));
  return value()[0];
}

Matrix Var::to_matrix() const {
  const auto& n = graph_->node(id_);
  return Matrix(n.shape.rows, n.shape.cols, n.value);
}

Matrix Var::grad_matrix() const {
  const auto& n = graph_->node(id_);
  if (!n.requires_grad) return Matrix(n.shape.rows, n.shape.cols);
  return Matrix(n.shape.rows, n.shape.cols, n.grad);
}

// ---------------------------------------------------------------- Graph

const Graph::Node& Graph::node(Var v) const {
  if (v.graph() != this) throw ContractError("node: tensor belongs to a different graph");
  return nodes_.at(v.id());
}

Var Graph::push(Node node) {
  if (node.value.size() != node.shape.size())
    throw DimensionError(node.op + ": value length does not match shape " + to_string(node.shape));
  for (double v : node.value)
    if (!std::isfinite(v)) throw NumericError(node.op + ": non-finite value in forward pass");
  if (node.requires_grad) node.grad.assign(node.value.size(), 0.0);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Shape shape, std::vector<double> value) {
  return push(Node{"constant", shape, std::move(value), {}, {}, {}, false});
}

Var Graph::parameter(Shape shape, std::vector<double> value) {
  return push(Node{"parameter", shape, std::move(value), {}, {}, {}, true});
}

Var Graph::record(std::string op, Shape shape, std::vector<double> value, std::vector<Var> inputs,
                  BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.shape = shape;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.graph() != this) throw ContractError(n.op + ": input belongs to a different graph");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_.at(id);
  return n.requires_grad ? std::span<double>(n.grad) : std::span<double>();
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw ContractError("backward: loss belongs to a different graph");
  const auto& root = nodes_.at(loss.id());
  if (root.shape.size() != 1)
    throw ContractError("backward: loss must be scalar, got " + to_string(root.shape));
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
  if (!root.requires_grad) return;
  nodes_[loss.id()].grad[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (n.requires_grad && n.backward) n.backward(*this, n);
  }
  for (const auto& n : nodes_)
    for (double g : n.grad)
      if (!std::isfinite(g)) throw NumericError(n.op + ": non-finite gradient");
}

// ---------------------------------------------------------------- helpers

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

void require_row_vector(const char* op, Var a, Var row) {
  if (row.shape().rows != 1 || row.shape().cols != a.shape().cols)
    throw DimensionError(std::string(op) + ": expected [1x" + std::to_string(a.shape().cols) +
                         "] row, got " + to_string(row.shape()));
}

}  // namespace

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows)
    throw DimensionError("matmul: inner dimensions differ " + to_string(sa) + " x " + to_string(sb));
  const std::size_t n = sa.rows, k = sa.cols, m = sb.cols;
  std::vector<double> out(n * m, 0.0);
  kernels::parallel::gemm_nn(a.value(), b.value(), out, n, k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("matmul", {n, m}, std::move(out), {a, b},
                           [ia, ib, n, k, m](Graph& g, const Graph::Node& self) {
                             if (auto ga = g.grad_buffer(ia); !ga.empty())
                               kernels::parallel::gemm_nt(self.grad, g.node(ib).value, ga, n, m, k);
                             if (auto gb = g.grad_buffer(ib); !gb.empty())
                               kernels::parallel::gemm_tn(g.node(ia).value, self.grad, gb, n, k, m);
                           });
}

Var matmul_nt(Var a, Var b) {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.cols)
    throw DimensionError("matmul_nt: inner dimensions differ " + to_string(sa) + " x " +
                         to_string(sb) + "^T");
  const std::size_t n = sa.rows, k = sa.cols, m = sb.rows;
  std::vector<double> out(n * m, 0.0);
  kernels::parallel::gemm_nt(a.value(), b.value(), out, n, k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("matmul_nt", {n, m}, std::move(out), {a, b},
                           [ia, ib, n, k, m](Graph& g, const Graph::Node& self) {
                             // dA += dC * B, dB += dC^T * A
                             if (auto ga = g.grad_buffer(ia); !ga.empty())
                               kernels::parallel::gemm_nn(self.grad, g.node(ib).value, ga, n, m, k);
                             if (auto gb = g.grad_buffer(ib); !gb.empty())
                               kernels::parallel::gemm_tn(self.grad, g.node(ia).value, gb, n, m, k);
                           });
}

Var transpose(Var a) {
  const Shape s = a.shape();
  std::vector<double> out(s.size());
  auto v = a.value();
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out[j * s.rows + i] = v[i * s.cols + j];
  const std::size_t ia = a.id();
  return a.graph()->record("transpose", {s.cols, s.rows}, std::move(out), {a},
                           [ia, s](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < s.rows; ++i)
                               for (std::size_t j = 0; j < s.cols; ++j)
                                 ga[i * s.cols + j] += self.grad[j * s.rows + i];
                           });
}

// ---------------------------------------------------------------- elementwise

Var relu(Var a) {
  auto v = a.value();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  const std::size_t ia = a.id();
  return a.graph()->record("relu", a.shape(), std::move(out), {a},
                           [ia](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             const auto& x = g.node(ia).value;
                             for (std::size_t i = 0; i < ga.size(); ++i)
                               if (x[i] > 0.0) ga[i] += self.grad[i];
                           });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  auto va = a.value(), vb = b.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + vb[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("add", a.shape(), std::move(out), {a, b},
                           [ia, ib](Graph& g, const Graph::Node& self) {
                             for (std::size_t id : {ia, ib}) {
                               auto gx = g.grad_buffer(id);
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
                             }
                           });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  auto va = a.value(), vb = b.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] - vb[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("sub", a.shape(), std::move(out), {a, b},
                           [ia, ib](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                             auto gb = g.grad_buffer(ib);
                             for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
                           });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  auto va = a.value(), vb = b.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * vb[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record("mul", a.shape(), std::move(out), {a, b},
                           [ia, ib](Graph& g, const Graph::Node& self) {
                             // Separate passes so that mul(x, x) accumulates both paths.
                             if (auto ga = g.grad_buffer(ia); !ga.empty()) {
                               const auto& y = g.node(ib).value;
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * y[i];
                             }
                             if (auto gb = g.grad_buffer(ib); !gb.empty()) {
                               const auto& x = g.node(ia).value;
                               for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * x[i];
                             }
                           });
}

Var add_bias(Var a, Var bias) {
  require_row_vector("add_bias", a, bias);
  const Shape s = a.shape();
  auto va = a.value(), vb = bias.value();
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out[i * s.cols + j] = va[i * s.cols + j] + vb[j];
  const std::size_t ia = a.id(), ib = bias.id();
  return a.graph()->record("add_bias", s, std::move(out), {a, bias},
                           [ia, ib, s](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                             auto gb = g.grad_buffer(ib);
                             if (gb.empty()) return;
                             for (std::size_t i = 0; i < s.rows; ++i)
                               for (std::size_t j = 0; j < s.cols; ++j) gb[j] += self.grad[i * s.cols + j];
                           });
}

Var add_scalar(Var a, double s) {
  auto va = a.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] + s;
  const std::size_t ia = a.id();
  return a.graph()->record("add_scalar", a.shape(), std::move(out), {a},
                           [ia](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                           });
}

Var scale(Var a, double s) {
  auto va = a.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * s;
  const std::size_t ia = a.id();
  return a.graph()->record("scale", a.shape(), std::move(out), {a},
                           [ia, s](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * s;
                           });
}

Var scale_by(Var a, Var s) {
  if (s.shape().size() != 1) throw DimensionError("scale_by: factor must be 1x1, got " + to_string(s.shape()));
  auto va = a.value();
  const double f = s.value()[0];
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = va[i] * f;
  const std::size_t ia = a.id(), is = s.id();
  return a.graph()->record("scale_by", a.shape(), std::move(out), {a, s},
                           [ia, is](Graph& g, const Graph::Node& self) {
                             const double f = g.node(is).value[0];
                             if (auto ga = g.grad_buffer(ia); !ga.empty())
                               for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * f;
                             if (auto gs = g.grad_buffer(is); !gs.empty()) {
                               const auto& x = g.node(ia).value;
                               double acc = 0.0;
                               for (std::size_t i = 0; i < x.size(); ++i) acc += self.grad[i] * x[i];
                               gs[0] += acc;
                             }
                           });
}

Var sum(Var a) {
  double total = 0.0;
  for (double v : a.value()) total += v;
  const std::size_t ia = a.id();
  return a.graph()->record("sum", {1, 1}, {total}, {a}, [ia](Graph& g, const Graph::Node& self) {
    auto ga = g.grad_buffer(ia);
    for (auto& x : ga) x += self.grad[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.shape().size());
  double total = 0.0;
  for (double v : a.value()) total += v;
  const std::size_t ia = a.id();
  return a.graph()->record("mean", {1, 1}, {total / n}, {a}, [ia, n](Graph& g, const Graph::Node& self) {
    auto ga = g.grad_buffer(ia);
    for (auto& x : ga) x += self.grad[0] / n;
  });
}

Var sqrt(Var a) {
  auto va = a.value();
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) {
    if (va[i] < 0.0) throw NumericError("sqrt: negative input");
    out[i] = std::sqrt(va[i]);
  }
  const std::size_t ia = a.id();
  return a.graph()->record("sqrt", a.shape(), std::move(out), {a},
                           [ia](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < ga.size(); ++i)
                               if (self.value[i] > 0.0) ga[i] += self.grad[i] * 0.5 / self.value[i];
                           });
}

// ---------------------------------------------------------------- indexing

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Shape s = a.shape();
  std::vector<double> out(rows.size() * s.cols);
  auto va = a.value();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= s.rows)
      throw IndexError("gather_rows: row " + std::to_string(rows[r]) + " out of " + to_string(s));
    std::copy_n(va.begin() + static_cast<std::ptrdiff_t>(rows[r] * s.cols), s.cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * s.cols));
  }
  const std::size_t ia = a.id();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.graph()->record("gather_rows", {rows.size(), s.cols}, std::move(out), {a},
                           [ia, idx = std::move(idx), cols = s.cols](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t r = 0; r < idx.size(); ++r)
                               for (std::size_t j = 0; j < cols; ++j)
                                 ga[idx[r] * cols + j] += self.grad[r * cols + j];
                           });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Shape s = a.shape();
  if (begin > end || end > s.cols)
    throw IndexError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of " + to_string(s));
  const std::size_t w = end - begin;
  std::vector<double> out(s.rows * w);
  auto va = a.value();
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = va[i * s.cols + begin + j];
  const std::size_t ia = a.id();
  return a.graph()->record("slice_cols", {s.rows, w}, std::move(out), {a},
                           [ia, s, begin, w](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < s.rows; ++i)
                               for (std::size_t j = 0; j < w; ++j)
                                 ga[i * s.cols + begin + j] += self.grad[i * w + j];
                           });
}

// ---------------------------------------------------------------- column statistics

Var col_mean(Var a) {
  const Shape s = a.shape();
  auto va = a.value();
  std::vector<double> out(s.cols, 0.0);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out[j] += va[i * s.cols + j];
  const double n = static_cast<double>(s.rows);
  for (auto& v : out) v /= n;
  const std::size_t ia = a.id();
  return a.graph()->record("col_mean", {1, s.cols}, std::move(out), {a},
                           [ia, s, n](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < s.rows; ++i)
                               for (std::size_t j = 0; j < s.cols; ++j) ga[i * s.cols + j] += self.grad[j] / n;
                           });
}

Var col_std(Var a) {
  const Shape s = a.shape();
  if (s.rows < 2) throw InsufficientSamples("col_std: needs at least 2 rows, got " + to_string(s));
  auto va = a.value();
  std::vector<double> mu(s.cols, 0.0);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) mu[j] += va[i * s.cols + j];
  for (auto& v : mu) v /= static_cast<double>(s.rows);
  std::vector<double> out(s.cols, 0.0);
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) {
      const double dlt = va[i * s.cols + j] - mu[j];
      out[j] += dlt * dlt;
    }
  const double dof = static_cast<double>(s.rows - 1);
  for (auto& v : out) v = std::sqrt(v / dof);
  const std::size_t ia = a.id();
  return a.graph()->record("col_std", {1, s.cols}, std::move(out), {a},
                           [ia, s, dof, mu = std::move(mu)](Graph& g, const Graph::Node& self) {
                             // d std_j / d x_ij = (x_ij - mu_j) / ((n - 1) std_j)
                             auto ga = g.grad_buffer(ia);
                             const auto& x = g.node(ia).value;
                             for (std::size_t j = 0; j < s.cols; ++j) {
                               if (self.value[j] == 0.0) continue;
                               const double f = self.grad[j] / (dof * self.value[j]);
                               for (std::size_t i = 0; i < s.rows; ++i)
                                 ga[i * s.cols + j] += f * (x[i * s.cols + j] - mu[j]);
                             }
                           });
}

Var sub_row(Var a, Var row) {
  require_row_vector("sub_row", a, row);
  const Shape s = a.shape();
  auto va = a.value(), vr = row.value();
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out[i * s.cols + j] = va[i * s.cols + j] - vr[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.graph()->record("sub_row", s, std::move(out), {a, row},
                           [ia, ir, s](Graph& g, const Graph::Node& self) {
                             auto ga = g.grad_buffer(ia);
                             for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
                             auto gr = g.grad_buffer(ir);
                             if (gr.empty()) return;
                             for (std::size_t i = 0; i < s.rows; ++i)
                               for (std::size_t j = 0; j < s.cols; ++j) gr[j] -= self.grad[i * s.cols + j];
                           });
}

Var div_row(Var a, Var row) {
  require_row_vector("div_row", a, row);
  const Shape s = a.shape();
  auto va = a.value(), vr = row.value();
  for (double d : vr)
    if (d == 0.0) throw NumericError("div_row: division by zero");
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.rows; ++i)
    for (std::size_t j = 0; j < s.cols; ++j) out[i * s.cols + j] = va[i * s.cols + j] / vr[j];
  const std::size_t ia = a.id(), ir = row.id();
  return a.graph()->record("div_row", s, std::move(out), {a, row},
                           [ia, ir, s](Graph& g, const Graph::Node& self) {
                             const auto& r = g.node(ir).value;
                             if (auto ga = g.grad_buffer(ia); !ga.empty())
                               for (std::size_t i = 0; i < s.rows; ++i)
                                 for (std::size_t j = 0; j < s.cols; ++j)
                                   ga[i * s.cols + j] += self.grad[i * s.cols + j] / r[j];
                             if (auto gr = g.grad_buffer(ir); !gr.empty())
                               for (std::size_t i = 0; i < s.rows; ++i)
                                 for (std::size_t j = 0; j < s.cols; ++j)
                                   gr[j] -= self.grad[i * s.cols + j] * self.value[i * s.cols + j] / r[j];
                           });
}

// ---------------------------------------------------------------- normalization

Var row_normalize(Var a, double eps) {
  const Shape s = a.shape();
  auto va = a.value();
  std::vector<double> norms(s.rows), out(s.size());
  for (std::size_t i = 0; i < s.rows; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) sq += va[i * s.cols + j] * va[i * s.cols + j];
    norms[i] = std::max(std::sqrt(sq), eps);
    for (std::size_t j = 0; j < s.cols; ++j) out[i * s.cols + j] = va[i * s.cols + j] / norms[i];
  }
  const std::size_t ia = a.id();
  return a.graph()->record(
      "row_normalize", s, std::move(out), {a},
      [ia, s, eps, norms = std::move(norms)](Graph& g, const Graph::Node& self) {
        // y = x / |x|  =>  dx = (dy - y (y . dy)) / |x|; below eps the norm is constant.
        auto ga = g.grad_buffer(ia);
        for (std::size_t i = 0; i < s.rows; ++i) {
          const double* y = self.value.data() + i * s.cols;
          const double* dy = self.grad.data() + i * s.cols;
          const bool clamped = norms[i] <= eps;
          double proj = 0.0;
          if (!clamped)
            for (std::size_t j = 0; j < s.cols; ++j) proj += y[j] * dy[j];
          for (std::size_t j = 0; j < s.cols; ++j) ga[i * s.cols + j] += (dy[j] - y[j] * proj) / norms[i];
        }
      });
}

Var cosine_rows(Var a, Var b, double eps) {
  require_same_shape("cosine_rows", a, b);
  const Shape s = a.shape();
  auto va = a.value(), vb = b.value();
  std::vector<double> na(s.rows), nb(s.rows), dots(s.rows), out(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) {
    double aa = 0.0, bb = 0.0, ab = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) {
      const double x = va[i * s.cols + j], y = vb[i * s.cols + j];
      aa += x * x;
      bb += y * y;
      ab += x * y;
    }
    na[i] = std::sqrt(aa);
    nb[i] = std::sqrt(bb);
    dots[i] = ab;
    out[i] = ab / (na[i] * nb[i] + eps);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph()->record(
      "cosine_rows", {s.rows, 1}, std::move(out), {a, b},
      [ia, ib, s, eps, na = std::move(na), nb = std::move(nb), dots = std::move(dots)](
          Graph& g, const Graph::Node& self) {
        // c = ab / D with D = |a||b| + eps
        // dc/da = b / D - ab |b| a / (|a| D^2)
        const auto& xa = g.node(ia).value;
        const auto& xb = g.node(ib).value;
        auto ga = g.grad_buffer(ia);
        auto gb = g.grad_buffer(ib);
        for (std::size_t i = 0; i < s.rows; ++i) {
          const double denom = na[i] * nb[i] + eps;
          const double up = self.grad[i];
          const double ca = na[i] > 0.0 ? dots[i] * nb[i] / (na[i] * denom * denom) : 0.0;
          const double cb = nb[i] > 0.0 ? dots[i] * na[i] / (nb[i] * denom * denom) : 0.0;
          for (std::size_t j = 0; j < s.cols; ++j) {
            const double x = xa[i * s.cols + j], y = xb[i * s.cols + j];
            if (!ga.empty()) ga[i * s.cols + j] += up * (y / denom - ca * x);
            if (!gb.empty()) gb[i * s.cols + j] += up * (x / denom - cb * y);
          }
        }
      });
}

// ---------------------------------------------------------------- losses

Matrix softmax_rows(const Matrix& logits, double temperature) {
  Matrix p(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto in = logits.row(i);
    auto out = p.row(i);
    const double mx = *std::max_element(in.begin(), in.end()) / temperature;
    double z = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] / temperature - mx);
      z += out[j];
    }
    for (auto& v : out) v /= z;
  }
  return p;
}

namespace {

// Row-wise log-softmax; returns (log-probabilities, probabilities).
std::pair<std::vector<double>, std::vector<double>> log_softmax(std::span<const double> v, Shape s) {
  std::vector<double> logp(s.size()), p(s.size());
  for (std::size_t i = 0; i < s.rows; ++i) {
    const double* row = v.data() + i * s.cols;
    const double mx = *std::max_element(row, row + s.cols);
    double z = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) z += std::exp(row[j] - mx);
    const double logz = mx + std::log(z);
    for (std::size_t j = 0; j < s.cols; ++j) {
      logp[i * s.cols + j] = row[j] - logz;
      p[i * s.cols + j] = std::exp(logp[i * s.cols + j]);
    }
  }
  return {std::move(logp), std::move(p)};
}

}  // namespace

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Shape s = logits.shape();
  if (s.rows == 0 || labels.size() != s.rows)
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         to_string(s));
  for (std::size_t y : labels)
    if (y >= s.cols)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(y) + " out of range for " +
                       std::to_string(s.cols) + " classes");
  auto [logp, p] = log_softmax(logits.value(), s);
  double loss = 0.0;
  for (std::size_t i = 0; i < s.rows; ++i) loss -= logp[i * s.cols + labels[i]];
  const double n = static_cast<double>(s.rows);
  loss /= n;
  const std::size_t il = logits.id();
  std::vector<std::size_t> y(labels.begin(), labels.end());
  return logits.graph()->record(
      "softmax_cross_entropy", {1, 1}, {loss}, {logits},
      [il, s, n, p = std::move(p), y = std::move(y)](Graph& g, const Graph::Node& self) {
        auto gl = g.grad_buffer(il);
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < s.rows; ++i)
          for (std::size_t j = 0; j < s.cols; ++j)
            gl[i * s.cols + j] += up * (p[i * s.cols + j] - (j == y[i] ? 1.0 : 0.0));
      });
}

Var soft_cross_entropy(Var logits, const Matrix& target) {
  const Shape s = logits.shape();
  if (target.rows != s.rows || target.cols != s.cols || s.rows == 0)
    throw DimensionError("soft_cross_entropy: target [" + std::to_string(target.rows) + "x" +
                         std::to_string(target.cols) + "] vs logits " + to_string(s));
  auto [logp, p] = log_softmax(logits.value(), s);
  double loss = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) loss -= target.data[i] * logp[i];
  const double n = static_cast<double>(s.rows);
  loss /= n;
  const std::size_t il = logits.id();
  return logits.graph()->record(
      "soft_cross_entropy", {1, 1}, {loss}, {logits},
      [il, s, n, p = std::move(p), t = target.data](Graph& g, const Graph::Node& self) {
        // d/dz_j of -sum_c t_c log p_c = p_j * sum_c t_c - t_j
        auto gl = g.grad_buffer(il);
        const double up = self.grad[0] / n;
        for (std::size_t i = 0; i < s.rows; ++i) {
          double mass = 0.0;
          for (std::size_t j = 0; j < s.cols; ++j) mass += t[i * s.cols + j];
          for (std::size_t j = 0; j < s.cols; ++j)
            gl[i * s.cols + j] += up * (p[i * s.cols + j] * mass - t[i * s.cols + j]);
        }
      });
}

// ---------------------------------------------------------------- gradient check

double grad_check(const ScalarFn& f, const std::vector<Matrix>& inputs, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  for (const auto& m : inputs)
    for (double v : m.data)
      if (!std::isfinite(v)) throw NumericError("grad_check: non-finite input");

  std::vector<Matrix> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& m : inputs) vars.push_back(g.parameter(m));
    Var out = f(g, vars);
    g.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad_matrix());
  }

  auto evaluate = [&](const std::vector<Matrix>& xs) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& m : xs) vars.push_back(g.constant(m));
    const double y = f(g, vars).item();
    if (!std::isfinite(y)) throw NumericError("grad_check: non-finite function value");
    return y;
  };

  double worst = 0.0;
  std::vector<Matrix> probe = inputs;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (std::size_t i = 0; i < probe[t].data.size(); ++i) {
      const double orig = probe[t].data[i];
      probe[t].data[i] = orig + eps;
      const double up = evaluate(probe);
      probe[t].data[i] = orig - eps;
      const double down = evaluate(probe);
      probe[t].data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[t].data[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace cil::ad
