#include "fsvfm/autograd.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "fsvfm/errors.hpp"

namespace fsvfm::ag {

Matrix& Node::grad_buffer() {
  if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
  return grad;
}

Matrix Tensor::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Matrix::Zero(node_->value.rows(), node_->value.cols());
}

double Tensor::item() const {
  if (value().size() != 1) throw ShapeError("item() on a non-scalar tensor");
  return value()(0, 0);
}

Tensor constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Tensor(std::move(n));
}

Tensor leaf(Matrix value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor make_op(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
  if (any) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.defined() ? t.node() : nullptr);
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& root) {
  if (root.value().size() != 1) throw ShapeError("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && !child->inputs.empty() && seen.insert(child).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root.node()->grad_buffer()(0, 0) += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n != root.node().get()) n->grad.resize(0, 0);
  }
}

namespace {

bool wants(const Node& self, std::size_t i) {
  return self.inputs[i] && self.inputs[i]->requires_grad;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return make_op(std::move(out), {a, b}, [](Node& self) {
    const Matrix& g = self.grad;
    if (wants(self, 0)) self.inputs[0]->grad_buffer().noalias() += g * self.inputs[1]->value.transpose();
    if (wants(self, 1)) self.inputs[1]->grad_buffer().noalias() += self.inputs[0]->value.transpose() * g;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.rows()) throw ShapeError("linear: input width does not match weight rows");
  Matrix out = x.value() * weight.value();
  if (bias.defined()) out.rowwise() += bias.value().row(0);
  return make_op(std::move(out), {x, weight, bias}, [](Node& self) {
    const Matrix& g = self.grad;
    if (wants(self, 0)) self.inputs[0]->grad_buffer().noalias() += g * self.inputs[1]->value.transpose();
    if (wants(self, 1)) self.inputs[1]->grad_buffer().noalias() += self.inputs[0]->value.transpose() * g;
    if (wants(self, 2)) self.inputs[2]->grad_buffer().row(0) += g.colwise().sum();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a.value(), b.value(), "add");
  return make_op(a.value() + b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer() += self.grad;
    if (wants(self, 1)) self.inputs[1]->grad_buffer() += self.grad;
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a.value(), b.value(), "sub");
  return make_op(a.value() - b.value(), {a, b}, [](Node& self) {
    if (wants(self, 0)) self.inputs[0]->grad_buffer() += self.grad;
    if (wants(self, 1)) self.inputs[1]->grad_buffer() -= self.grad;
  });
}

Tensor add_constant(const Tensor& a, const Matrix& c) {
  check_same_shape(a.value(), c, "add_constant");
  return make_op(a.value() + c, {a}, [](Node& self) { self.inputs[0]->grad_buffer() += self.grad; });
}

Tensor scale(const Tensor& a, double s) {
  return make_op(a.value() * s, {a}, [s](Node& self) { self.inputs[0]->grad_buffer() += s * self.grad; });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Matrix& xv = x.value();
  const Index rows = xv.rows();
  const Index cols = xv.cols();
  if (gamma.cols() != cols || beta.cols() != cols) throw ShapeError("layer_norm: affine width mismatch");
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    double mean = xv.row(r).mean();
    double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);
  return make_op(std::move(out), {x, gamma, beta},
                 [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                   const Matrix& g = self.grad;
                   if (wants(self, 1))
                     self.inputs[1]->grad_buffer().row(0) += (g.array() * xhat.array()).colwise().sum().matrix();
                   if (wants(self, 2)) self.inputs[2]->grad_buffer().row(0) += g.colwise().sum();
                   if (wants(self, 0)) {
                     Matrix gxhat = g;
                     gxhat.array().rowwise() *= self.inputs[1]->value.row(0).array();
                     Matrix& gx = self.inputs[0]->grad_buffer();
                     const double n = static_cast<double>(g.cols());
                     for (Index r = 0; r < g.rows(); ++r) {
                       double m1 = gxhat.row(r).sum() / n;
                       double m2 = gxhat.row(r).dot(xhat.row(r)) / n;
                       gx.row(r).array() +=
                           inv_std(r) * (gxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                     }
                   }
                 });
}

Tensor gelu(const Tensor& x) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  Matrix out = x.value().unaryExpr([&](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  return make_op(std::move(out), {x}, [inv_sqrt2](Node& self) {
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Matrix d = self.inputs[0]->value.unaryExpr([&](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    });
    self.inputs[0]->grad_buffer().array() += self.grad.array() * d.array();
  });
}

Tensor relu(const Tensor& x) {
  Matrix out = x.value().cwiseMax(0.0);
  return make_op(std::move(out), {x}, [](Node& self) {
    self.inputs[0]->grad_buffer().array() +=
        (self.inputs[0]->value.array() > 0.0).select(self.grad.array(), 0.0);
  });
}

Tensor slice_cols(const Tensor& x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.cols()) throw ShapeError("slice_cols: out of range");
  Matrix out = x.value().middleCols(begin, count);
  return make_op(std::move(out), {x}, [begin, count](Node& self) {
    self.inputs[0]->grad_buffer().middleCols(begin, count) += self.grad;
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Index cols = parts[0].cols();
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: width mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index r = 0;
  for (const auto& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return make_op(std::move(out), parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (!wants(self, i)) continue;
      Index n = self.inputs[i]->value.rows();
      self.inputs[i]->grad_buffer() += self.grad.middleRows(offsets[i], n);
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Index rows = parts[0].rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: height mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index c = 0;
  for (const auto& p : parts) {
    offsets.push_back(c);
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return make_op(std::move(out), parts, [offsets = std::move(offsets)](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i) {
      if (!wants(self, i)) continue;
      Index n = self.inputs[i]->value.cols();
      self.inputs[i]->grad_buffer() += self.grad.middleCols(offsets[i], n);
    }
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= x.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = x.value().row(rows[i]);
  }
  return make_op(std::move(out), {x}, [rows](Node& self) {
    Matrix& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += self.grad.row(static_cast<Index>(i));
  });
}

Tensor assemble_rows(const Tensor& visible, const Tensor& filler, const std::vector<int>& source) {
  if (!visible.defined() && !filler.defined()) throw ShapeError("assemble_rows: no inputs");
  const Index cols = visible.defined() ? visible.cols() : filler.cols();
  Matrix out(static_cast<Index>(source.size()), cols);
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i] >= 0) {
      if (!visible.defined() || source[i] >= visible.rows()) throw ShapeError("assemble_rows: source index out of range");
      out.row(static_cast<Index>(i)) = visible.value().row(source[i]);
    } else {
      if (!filler.defined()) throw ShapeError("assemble_rows: masked slot without filler");
      if (filler.cols() != cols) throw ShapeError("assemble_rows: filler width mismatch");
      out.row(static_cast<Index>(i)) = filler.value().row(0);
    }
  }
  return make_op(std::move(out), {visible, filler}, [source](Node& self) {
    const bool gv = wants(self, 0);
    const bool gf = self.inputs.size() > 1 && wants(self, 1);
    for (std::size_t i = 0; i < source.size(); ++i) {
      auto g = self.grad.row(static_cast<Index>(i));
      if (source[i] >= 0) {
        if (gv) self.inputs[0]->grad_buffer().row(source[i]) += g;
      } else if (gf) {
        self.inputs[1]->grad_buffer().row(0) += g;
      }
    }
  });
}

Tensor mean_rows(const Tensor& x, Index begin, Index end) {
  if (begin < 0 || end > x.rows() || end <= begin) throw ShapeError("mean_rows: empty or invalid range");
  const double inv = 1.0 / static_cast<double>(end - begin);
  Matrix out = x.value().middleRows(begin, end - begin).colwise().sum() * inv;
  return make_op(std::move(out), {x}, [begin, end, inv](Node& self) {
    Matrix& gx = self.inputs[0]->grad_buffer();
    for (Index r = begin; r < end; ++r) gx.row(r) += self.grad.row(0) * inv;
  });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  const Matrix& xv = x.value();
  Eigen::VectorXd norms(xv.rows());
  Matrix out(xv.rows(), xv.cols());
  for (Index r = 0; r < xv.rows(); ++r) {
    norms(r) = std::max(xv.row(r).norm(), eps);
    out.row(r) = xv.row(r) / norms(r);
  }
  return make_op(out, {x}, [out, norms, eps](Node& self) {
    Matrix& gx = self.inputs[0]->grad_buffer();
    for (Index r = 0; r < out.rows(); ++r) {
      auto g = self.grad.row(r);
      if (self.inputs[0]->value.row(r).norm() > eps) {
        gx.row(r) += (g - out.row(r) * g.dot(out.row(r))) / norms(r);
      } else {
        gx.row(r) += g / eps;
      }
    }
  });
}

Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& weights) {
  if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) total += weights[i] * scalars[i].item();
  Matrix out(1, 1);
  out(0, 0) = total;
  return make_op(std::move(out), scalars, [weights](Node& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (wants(self, i)) self.inputs[i]->grad_buffer()(0, 0) += weights[i] * self.grad(0, 0);
  });
}

Tensor sum_squares(const Tensor& x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().squaredNorm();
  return make_op(std::move(out), {x}, [](Node& self) {
    self.inputs[0]->grad_buffer() += (2.0 * self.grad(0, 0)) * self.inputs[0]->value;
  });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
  const Matrix& z = logits.value();
  if (static_cast<Index>(targets.size()) != z.rows() || z.rows() == 0)
    throw ShapeError("cross_entropy: one target per logit row required");
  Matrix probs = softmax_rows(z);
  double total = 0.0;
  for (Index r = 0; r < z.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= z.cols()) throw ShapeError("cross_entropy: target class out of range");
    const double m = z.row(r).maxCoeff();
    total -= z(r, t) - m - std::log((z.row(r).array() - m).exp().sum());
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(z.rows());
  return make_op(std::move(out), {logits}, [probs, targets](Node& self) {
    Matrix g = probs;
    for (Index r = 0; r < g.rows(); ++r) g(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
    self.inputs[0]->grad_buffer() += g * (self.grad(0, 0) / static_cast<double>(g.rows()));
  });
}

Matrix softmax_rows(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mx = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads, std::vector<Matrix>* probs_out) {
  const Index d = q.cols();
  if (k.cols() != d || v.cols() != d) throw ShapeError("attention: width mismatch");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value length mismatch");
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const Index dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  Matrix out(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    auto qh = q.value().middleCols(h * dh, dh);
    auto kh = k.value().middleCols(h * dh, dh);
    auto vh = v.value().middleCols(h * dh, dh);
    Matrix scores = (qh * kh.transpose()) * sc;
    probs[h] = softmax_rows(scores);
    out.middleCols(h * dh, dh).noalias() = probs[h] * vh;
  }
  if (probs_out) *probs_out = probs;
  return make_op(std::move(out), {q, k, v}, [probs = std::move(probs), heads, dh, sc](Node& self) {
    const Matrix& qv = self.inputs[0]->value;
    const Matrix& kv = self.inputs[1]->value;
    const Matrix& vv = self.inputs[2]->value;
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = probs[h];
      auto go = self.grad.middleCols(h * dh, dh);
      if (wants(self, 2)) self.inputs[2]->grad_buffer().middleCols(h * dh, dh).noalias() += p.transpose() * go;
      if (!wants(self, 0) && !wants(self, 1)) continue;
      Matrix gp = go * vv.middleCols(h * dh, dh).transpose();
      Eigen::VectorXd rowdot = (gp.array() * p.array()).rowwise().sum();
      Matrix gs = p.array() * (gp.array().colwise() - rowdot.array());
      gs *= sc;
      if (wants(self, 0)) self.inputs[0]->grad_buffer().middleCols(h * dh, dh).noalias() += gs * kv.middleCols(h * dh, dh);
      if (wants(self, 1))
        self.inputs[1]->grad_buffer().middleCols(h * dh, dh).noalias() += gs.transpose() * qv.middleCols(h * dh, dh);
    }
  });
}

}  // namespace fsvfm::ag
