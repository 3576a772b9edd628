#include "e2eload/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace e2eload {
namespace {

std::atomic<std::uint64_t> next_node_id{1};
thread_local bool tl_grad_enabled = true;
thread_local bool tl_check_finite = false;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr make_node(Matrix value, std::vector<Index> shape) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->shape = std::move(shape);
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

std::vector<Index> matrix_shape(const Matrix& m) { return {m.rows(), m.cols()}; }

/// Wraps an op result, wiring the backward closure only when tracking applies.
Tensor finish(const char* op, Matrix value, std::initializer_list<const Tensor*> inputs,
              std::function<void(detail::Node&)> backward, bool rank0 = false) {
  if (tl_check_finite && !value.allFinite()) {
    throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
  std::vector<Index> shape = rank0 ? std::vector<Index>{} : matrix_shape(value);
  NodePtr node = make_node(std::move(value), std::move(shape));
  node->op = op;
  node->is_leaf = false;
  bool tracked = false;
  if (tl_grad_enabled) {
    for (const Tensor* t : inputs) tracked = tracked || t->requires_grad();
  }
  if (tracked) {
    node->requires_grad = true;
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(backward);
  }
  return Tensor::from_node(std::move(node));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

void require_row_vector(const Tensor& row, Index cols, const char* op) {
  if (row.rows() != 1 || row.cols() != cols) {
    throw ShapeError(std::string(op) + ": expected a 1x" + std::to_string(cols) + " row");
  }
}

bool wants_grad(const NodePtr& n) { return n->requires_grad; }

}  // namespace

NoGradGuard::NoGradGuard() : previous_(tl_grad_enabled) { tl_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tl_grad_enabled = previous_; }
bool grad_enabled() { return tl_grad_enabled; }

FiniteCheckGuard::FiniteCheckGuard() : previous_(tl_check_finite) { tl_check_finite = true; }
FiniteCheckGuard::~FiniteCheckGuard() { tl_check_finite = previous_; }

Tensor Tensor::constant(Matrix value) {
  auto shape = matrix_shape(value);
  return from_node(make_node(std::move(value), std::move(shape)));
}

Tensor Tensor::parameter(Matrix value) {
  Tensor t = constant(std::move(value));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = value;
  Tensor t = from_node(make_node(std::move(m), {}));
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::vector(const Vector& value, bool requires_grad) {
  Tensor t = from_node(make_node(Matrix(value), {value.cols()}));
  t.node_->requires_grad = requires_grad;
  return t;
}

double Tensor::item() const {
  if (node_->value.size() != 1) throw ShapeError("item: tensor has more than one element");
  return node_->value(0, 0);
}

Matrix Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

void Tensor::zero_grad() {
  if (has_grad()) node_->grad.setZero();
}

Matrix& Tensor::mutable_leaf_value() {
  if (!node_->is_leaf) throw ContractError("only leaf tensors may be modified in place");
  return node_->value;
}

void Tensor::backward() const {
  if (rank() != 0) {
    throw ShapeError("backward: loss must be rank-0, got rank " + std::to_string(rank()));
  }
  if (!node_->requires_grad) return;

  // Collect the tracked subgraph.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
  }
  // Ids grow with construction, so descending id is a valid reverse topological order.
  std::sort(order.begin(), order.end(),
            [](const detail::Node* a, const detail::Node* b) { return a->id > b->id; });
  for (detail::Node* n : order) {
    if (!n->is_leaf) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  }
  node_->grad_buffer()(0, 0) += 1.0;
  for (detail::Node* n : order) {
    if (n->backward) n->backward(*n);
  }
  // Interior gradients are scratch space.
  for (detail::Node* n : order) {
    if (!n->is_leaf) n->grad.resize(0, 0);
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + ")");
  }
  auto an = a.node(), bn = b.node();
  return finish("matmul", kernels::product(a.value(), b.value()), {&a, &b},
                [an, bn](detail::Node& self) {
                  if (wants_grad(an)) an->grad_buffer().noalias() += self.grad * bn->value.transpose();
                  if (wants_grad(bn)) bn->grad_buffer().noalias() += an->value.transpose() * self.grad;
                });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: channel counts differ");
  auto an = a.node(), bn = b.node();
  return finish("matmul_nt", kernels::product_nt(a.value(), b.value()), {&a, &b},
                [an, bn](detail::Node& self) {
                  if (wants_grad(an)) an->grad_buffer().noalias() += self.grad * bn->value;
                  if (wants_grad(bn)) bn->grad_buffer().noalias() += self.grad.transpose() * an->value;
                });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto an = a.node(), bn = b.node();
  return finish("add", a.value() + b.value(), {&a, &b}, [an, bn](detail::Node& self) {
    if (wants_grad(an)) an->grad_buffer() += self.grad;
    if (wants_grad(bn)) bn->grad_buffer() += self.grad;
  }, a.rank() == 0 && b.rank() == 0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto an = a.node(), bn = b.node();
  return finish("sub", a.value() - b.value(), {&a, &b}, [an, bn](detail::Node& self) {
    if (wants_grad(an)) an->grad_buffer() += self.grad;
    if (wants_grad(bn)) bn->grad_buffer() -= self.grad;
  }, a.rank() == 0 && b.rank() == 0);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto an = a.node(), bn = b.node();
  return finish("mul", a.value().cwiseProduct(b.value()), {&a, &b},
                [an, bn](detail::Node& self) {
                  if (wants_grad(an)) an->grad_buffer() += self.grad.cwiseProduct(bn->value);
                  if (wants_grad(bn)) bn->grad_buffer() += self.grad.cwiseProduct(an->value);
                }, a.rank() == 0 && b.rank() == 0);
}

Tensor scale(const Tensor& a, double s) {
  auto an = a.node();
  return finish("scale", a.value() * s, {&a}, [an, s](detail::Node& self) {
    an->grad_buffer() += self.grad * s;
  }, a.rank() == 0);
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_row_vector(row, a.cols(), "add_row");
  Matrix out = a.value();
  for (Index i = 0; i < out.rows(); ++i) out.row(i) += row.value();
  auto an = a.node(), rn = row.node();
  return finish("add_row", std::move(out), {&a, &row}, [an, rn](detail::Node& self) {
    if (wants_grad(an)) an->grad_buffer() += self.grad;
    if (wants_grad(rn)) {
      Matrix& g = rn->grad_buffer();
      for (Index i = 0; i < self.grad.rows(); ++i) g += self.grad.row(i);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_row_vector(gain, x.cols(), "layer_norm gain");
  require_row_vector(bias, x.cols(), "layer_norm bias");
  auto state = std::make_shared<kernels::LayerNormState<double>>();
  Matrix y = kernels::layer_norm(x.value(), gain.value(), bias.value(), eps, state.get());
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return finish("layer_norm", std::move(y), {&x, &gain, &bias},
                [xn, gn, bn, state](detail::Node& self) {
                  const Matrix& xhat = state->normalized;
                  const Matrix& g = self.grad;
                  if (wants_grad(gn)) gn->grad_buffer() += g.cwiseProduct(xhat).colwise().sum();
                  if (wants_grad(bn)) bn->grad_buffer() += g.colwise().sum();
                  if (wants_grad(xn)) {
                    const double d = static_cast<double>(xhat.cols());
                    Matrix& gx = xn->grad_buffer();
                    for (Index i = 0; i < g.rows(); ++i) {
                      const Vector gh = g.row(i).cwiseProduct(gn->value);
                      const double mean_gh = gh.sum() / d;
                      const double mean_gh_xhat = gh.cwiseProduct(xhat.row(i)).sum() / d;
                      gx.row(i) += state->inv_std(i) *
                                   (gh.array() - mean_gh - xhat.row(i).array() * mean_gh_xhat)
                                       .matrix();
                    }
                  }
                });
}

Tensor gelu(const Tensor& x) {
  Matrix y = x.value().unaryExpr([](double v) { return kernels::gelu(v); });
  auto xn = x.node();
  return finish("gelu", std::move(y), {&x}, [xn](detail::Node& self) {
    xn->grad_buffer() +=
        self.grad.cwiseProduct(xn->value.unaryExpr([](double v) { return kernels::gelu_derivative(v); }));
  });
}

Tensor masked_softmax_rows(const Tensor& x, const AdmissibilityMatrix* mask) {
  if (x.rank() != 2) throw ShapeError("softmax_rows: expected a rank-2 tensor");
  if (mask && (mask->rows() != x.rows() || mask->cols() != x.cols())) {
    throw ShapeError("masked_softmax_rows: mask shape does not match scores");
  }
  auto p = std::make_shared<Matrix>(kernels::masked_softmax_rows(x.value(), mask));
  auto xn = x.node();
  return finish("softmax_rows", *p, {&x}, [xn, p](detail::Node& self) {
    Matrix& gx = xn->grad_buffer();
    for (Index i = 0; i < p->rows(); ++i) {
      const double dot = self.grad.row(i).dot(p->row(i));
      gx.row(i).array() += p->row(i).array() * (self.grad.row(i).array() - dot);
    }
  });
}

Tensor softmax_rows(const Tensor& x) { return masked_softmax_rows(x, nullptr); }

Tensor attend(const Tensor& probabilities, const Tensor& values, const AdmissibilityMatrix* mask) {
  if (probabilities.cols() != values.rows()) throw ShapeError("attend: key count mismatch");
  auto pn = probabilities.node(), vn = values.node();
  return finish("attend", kernels::weighted_sum(probabilities.value(), values.value(), mask),
                {&probabilities, &values}, [pn, vn](detail::Node& self) {
                  if (wants_grad(pn)) pn->grad_buffer().noalias() += self.grad * vn->value.transpose();
                  if (wants_grad(vn)) vn->grad_buffer().noalias() += pn->value.transpose() * self.grad;
                });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Tensor& t : parts) {
    if (t.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += t.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  bool tracked = false;
  for (const Tensor& t : parts) {
    out.middleRows(at, t.rows()) = t.value();
    at += t.rows();
    tracked = tracked || t.requires_grad();
  }
  if (tl_check_finite && !out.allFinite()) throw NumericError("non-finite value produced by op 'concat_rows'");
  NodePtr node = make_node(std::move(out), {rows, cols});
  node->op = "concat_rows";
  node->is_leaf = false;
  if (tl_grad_enabled && tracked) {
    node->requires_grad = true;
    std::vector<Index> offsets;
    Index off = 0;
    for (const Tensor& t : parts) {
      node->inputs.push_back(t.node());
      offsets.push_back(off);
      off += t.rows();
    }
    node->backward = [offsets](detail::Node& self) {
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        auto& in = self.inputs[k];
        if (!in->requires_grad) continue;
        in->grad_buffer() += self.grad.middleRows(offsets[k], in->value.rows());
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor slice_rows(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside " + std::to_string(x.rows()) +
                     " rows");
  }
  auto xn = x.node();
  return finish("slice_rows", x.value().middleRows(begin, count), {&x},
                [xn, begin, count](detail::Node& self) {
                  xn->grad_buffer().middleRows(begin, count) += self.grad;
                });
}

Tensor gather_rows(const Tensor& x, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(k)) = x.value().row(rows[k]);
  }
  auto xn = x.node();
  std::vector<Index> idx(rows.begin(), rows.end());
  return finish("gather_rows", std::move(out), {&x}, [xn, idx](detail::Node& self) {
    Matrix& g = xn->grad_buffer();
    for (std::size_t k = 0; k < idx.size(); ++k) g.row(idx[k]) += self.grad.row(static_cast<Index>(k));
  });
}

Tensor sum(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  auto xn = x.node();
  return finish("sum", std::move(out), {&x}, [xn](detail::Node& self) {
    xn->grad_buffer().array() += self.grad(0, 0);
  }, true);
}

Tensor element(const Tensor& x, Index row, Index col) {
  if (row < 0 || row >= x.rows() || col < 0 || col >= x.cols()) {
    throw ShapeError("element: index out of range");
  }
  Tensor picked = slice_rows(x, row, 1);
  Matrix sel = Matrix::Zero(x.cols(), 1);
  sel(col, 0) = 1.0;
  return sum(matmul(picked, Tensor::constant(std::move(sel))));
}

Tensor stop_gradient(const Tensor& x) {
  NodePtr node = make_node(x.value(), x.shape());
  node->op = "stop_gradient";
  node->is_leaf = false;
  return Tensor::from_node(std::move(node));
}

Tensor strided_downsample(const Tensor& x, const GridExtents& grid, const Strides& strides,
                          DownsampleMode mode, const Tensor* kernel, const Tensor* bias) {
  kernels::check_strides(grid, strides, "strided_downsample");
  if (x.rows() != grid.count()) {
    throw ShapeError("strided_downsample: " + std::to_string(x.rows()) +
                     " rows do not match grid of " + std::to_string(grid.count()));
  }
  auto xn = x.node();
  if (mode == DownsampleMode::kPool) {
    const double inv = 1.0 / static_cast<double>(strides.volume());
    return finish("pool", kernels::block_pool(x.value(), grid, strides), {&x},
                  [xn, grid, strides, inv](detail::Node& self) {
                    Matrix& g = xn->grad_buffer();
                    kernels::for_each_block_tap(grid, strides, [&](Index o, Index i, Index) {
                      g.row(i) += inv * self.grad.row(o);
                    });
                  });
  }
  if (!kernel || !bias) throw ContractError("strided_downsample: conv mode needs kernel and bias");
  auto kn = kernel->node(), bn = bias->node();
  return finish("conv", kernels::block_conv(x.value(), grid, strides, kernel->value(), bias->value()),
                {&x, kernel, bias}, [xn, kn, bn, grid, strides](detail::Node& self) {
                  if (wants_grad(bn)) bn->grad_buffer() += self.grad.colwise().sum();
                  const bool gx = wants_grad(xn), gk = wants_grad(kn);
                  kernels::for_each_block_tap(grid, strides, [&](Index o, Index i, Index tap) {
                    if (gx) xn->grad_buffer().row(i) += self.grad.row(o).cwiseProduct(kn->value.row(tap));
                    if (gk) kn->grad_buffer().row(tap) += self.grad.row(o).cwiseProduct(xn->value.row(i));
                  });
                });
}

Tensor cross_entropy_sum(const Tensor& logits, const Matrix& labels) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols()) {
    throw ShapeError("cross_entropy_sum: labels shape does not match logits");
  }
  for (Index i = 0; i < labels.rows(); ++i) {
    Index ones = 0;
    for (Index j = 0; j < labels.cols(); ++j) {
      const double v = labels(i, j);
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw ContractError("cross_entropy_sum: label row " + std::to_string(i) + " is not one-hot");
  }
  auto p = std::make_shared<Matrix>(kernels::softmax_rows(logits.value()));
  double loss = 0.0;
  for (Index i = 0; i < labels.rows(); ++i) {
    for (Index j = 0; j < labels.cols(); ++j) {
      if (labels(i, j) == 1.0) {
        // log-sum-exp form keeps large-margin logits finite
        const double m = logits.value().row(i).maxCoeff();
        const double lse = m + std::log((logits.value().row(i).array() - m).exp().sum());
        loss += lse - logits.value()(i, j);
      }
    }
  }
  Matrix out(1, 1);
  out(0, 0) = loss;
  auto ln = logits.node();
  auto y = std::make_shared<Matrix>(labels);
  Tensor result = finish("cross_entropy_sum", std::move(out), {&logits}, [ln, p, y](detail::Node& self) {
    ln->grad_buffer() += self.grad(0, 0) * (*p - *y);
  }, true);
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Matrix& x, double eps) {
  FiniteCheckGuard finite;
  Tensor input = Tensor::parameter(x);
  Tensor out = f(input);
  if (out.rank() != 0) throw ShapeError("grad_check: function must return a rank-0 tensor");
  out.backward();
  const Matrix analytic = input.grad();

  double worst = 0.0;
  Matrix probe = x;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + eps;
      const double up = f(Tensor::constant(probe)).item();
      probe(i, j) = saved - eps;
      const double down = f(Tensor::constant(probe)).item();
      probe(i, j) = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic(i, j) - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace e2eload
