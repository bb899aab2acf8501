#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// Every value is a 2-D row-major matrix; token sets are T x d, scalars 1 x 1.
// A node records its inputs and a closure that pushes its gradient back to
// them. Nodes whose inputs are all constant record nothing, so forward passes
// through frozen or target parameters build no graph (stop-gradient).

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

namespace fsvfm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace ag {

struct Node {
  Matrix value;
  Matrix grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Matrix& grad_buffer();
  bool has_grad() const { return grad.size() != 0; }
};

using NodePtr = std::shared_ptr<Node>;

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Gradient after backward(); a zero matrix of matching shape when no
  // gradient reached this tensor.
  Matrix grad() const;
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.resize(0, 0); }
  bool has_grad() const { return node_->has_grad(); }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

Tensor constant(Matrix value);
Tensor leaf(Matrix value, bool requires_grad);

// Builds an op node. When no input requires a gradient the closure is
// discarded and the result is a constant.
Tensor make_op(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> backward_fn);

// Runs reverse accumulation from a 1x1 root, seeding d(root)/d(root) = 1.
void backward(const Tensor& root);

Tensor matmul(const Tensor& a, const Tensor& b);
// x (T x in) * W (in x out) + b (1 x out); b may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor add_constant(const Tensor& a, const Matrix& c);
Tensor scale(const Tensor& a, double s);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor slice_cols(const Tensor& x, Index begin, Index count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
// Output row i is visible.row(source[i]) when source[i] >= 0, otherwise
// filler.row(0). filler may be undefined when no source entry is negative.
Tensor assemble_rows(const Tensor& visible, const Tensor& filler, const std::vector<int>& source);
// Mean over rows [begin, end) -> 1 x cols.
Tensor mean_rows(const Tensor& x, Index begin, Index end);
// Row-wise x / max(||x||, eps).
Tensor l2_normalize_rows(const Tensor& x, double eps);
// Sum of squared entries -> 1 x 1.
Tensor sum_squares(const Tensor& x);
// Mean over rows of -log softmax(logits.row(i))[targets[i]] -> 1 x 1.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
// Weighted sum of 1x1 scalars.
Tensor weighted_sum(const std::vector<Tensor>& scalars, const std::vector<double>& weights);

// Multi-head scaled dot-product attention. q is Tq x d, k and v are Tk x d,
// d divisible by heads. When probs_out is non-null it receives one Tq x Tk
// probability matrix per head.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 std::vector<Matrix>* probs_out = nullptr);

// Row-wise numerically stable softmax (plain matrix helper).
Matrix softmax_rows(const Matrix& x);

}  // namespace ag
}  // namespace fsvfm
