#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skelmae {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One node of the compute graph. Holds the forward value, the (lazily
// allocated) gradient buffer, and a closure that pushes this node's gradient
// into its parents. Nodes created from constant inputs carry no parents, so
// the recorded graph is exactly the differentiable subgraph.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
  std::vector<NodePtr> parents;
  std::function<void(TensorNode&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
};

/// Value-semantic handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t size() const { return static_cast<int64_t>(node_->data.size()); }
  int64_t dim(int axis) const;
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->data; }
  /// Direct write access to the stored values. Intended for leaves only
  /// (parameter updates); writing to an interior node invalidates the graph.
  std::span<double> mutable_values() { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  double at(const std::vector<int64_t>& index) const;

  /// Same values, detached from the graph (no parents, requires_grad off).
  Tensor detached() const;

  NodePtr node() const { return node_; }

 private:
  NodePtr node_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, std::vector<int> perm);
Tensor concat(const std::vector<Tensor>& parts, int axis);

// ---- contractions and normalizations ----

/// Matrix product over the trailing two axes. Inputs must have equal rank;
/// leading (batch) dimensions must match exactly.
Tensor matmul(const Tensor& a, const Tensor& b);

/// x: (..., d_in), weight: (d_in, d_out), bias: (d_out). Row-wise affine map;
/// this is also the 1x1-convolution patch embedding over a token grid.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

/// Normalizes the last axis to zero mean / unit variance, then applies
/// gain and bias (both shaped like the last axis).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// ---- reductions ----
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);
Tensor mean_axis(const Tensor& x, int axis);

// ---- row selection (2-d only) ----

/// out[r] = x[rows[r]]. Rows may repeat; backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::vector<int64_t> rows);

/// Builds an (n_out, d) matrix: slot[r] >= 0 selects visible[slot[r]],
/// slot[r] == -1 inserts `fill` (a single learned row, shape (d)).
Tensor assemble_rows(const Tensor& visible, const Tensor& fill, std::vector<int64_t> slot);

/// Reverse-mode sweep from a scalar loss. Gradients accumulate additively
/// into every requires_grad ancestor; call zero_grad between steps.
void backward(const Tensor& loss);

/// Central-difference gradient estimate of a scalar function, element by
/// element: (f(x + h e_i) - f(x - h e_i)) / 2h. Forward passes only.
std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                     const Tensor& x, double h);

}  // namespace skelmae
