#include "skelmae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace skelmae {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::vector<int64_t> strides_of(const Shape& shape) {
  std::vector<int64_t> st(shape.size());
  int64_t acc = 1;
  for (size_t i = shape.size(); i-- > 0;) {
    st[i] = acc;
    acc *= shape[i];
  }
  return st;
}

int normalize_axis(int axis, size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    std::ostringstream os;
    os << op << ": axis " << axis << " invalid for rank " << r;
    throw ShapeError(os.str());
  }
  return a;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << op << ": shape mismatch " << shape_str(a.shape()) << " vs " << shape_str(b.shape());
    throw ShapeError(os.str());
  }
}

// Creates the result node. The graph edge (parents + backward closure) is
// recorded only when some input participates in differentiation.
Tensor make_op(Shape shape, std::vector<double> data, std::vector<NodePtr> parents,
               std::function<void(TensorNode&)> backward_fn) {
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  node->requires_grad = rg;
  if (rg) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(node);
}

// Splits a shape at `axis` into (outer, n, inner) loop bounds.
struct LaneSplit {
  int64_t outer, n, inner;
};

LaneSplit lane_split(const Shape& shape, int axis) {
  LaneSplit s{1, shape[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  for (int64_t d : shape)
    if (d <= 0) throw ShapeError("Tensor: non-positive dimension in " + shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->data.assign(static_cast<size_t>(numel(shape)), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    std::ostringstream os;
    os << "Tensor: " << data.size() << " values do not fill shape " << shape_str(shape);
    throw ShapeError(os.str());
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

int64_t Tensor::dim(int axis) const {
  int a = normalize_axis(axis, node_->shape.size(), "dim");
  return node_->shape[static_cast<size_t>(a)];
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty()) throw std::runtime_error("Tensor::grad: gradient not populated");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (node_->grad.empty()) throw std::runtime_error("Tensor::grad: gradient not populated");
  return node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("Tensor::item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return node_->data[0];
}

double Tensor::at(const std::vector<int64_t>& index) const {
  if (index.size() != node_->shape.size()) throw ShapeError("Tensor::at: rank mismatch");
  auto st = strides_of(node_->shape);
  int64_t off = 0;
  for (size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= node_->shape[i]) throw ShapeError("Tensor::at: index out of range");
    off += index[i] * st[i];
  }
  return node_->data[static_cast<size_t>(off)];
}

Tensor Tensor::detached() const {
  return from_data(node_->shape, node_->data, false);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (int64_t i = 0; i < a.size(); ++i) out[static_cast<size_t>(i)] += b.values()[static_cast<size_t>(i)];
  NodePtr an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.values().begin(), a.values().end());
  for (int64_t i = 0; i < a.size(); ++i) out[static_cast<size_t>(i)] -= b.values()[static_cast<size_t>(i)];
  NodePtr an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(static_cast<size_t>(a.size()));
  for (int64_t i = 0; i < a.size(); ++i)
    out[static_cast<size_t>(i)] = a.values()[static_cast<size_t>(i)] * b.values()[static_cast<size_t>(i)];
  NodePtr an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {an, bn}, [an, bn](TensorNode& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->data[i];
    }
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v += s;
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(out), {an}, [an](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor mul_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  NodePtr an = a.node();
  return make_op(a.shape(), std::move(out), {an}, [an, s](TensorNode& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(static_cast<size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = x.values()[static_cast<size_t>(i)];
    out[static_cast<size_t>(i)] = v > 0.0 ? v : 0.0;
  }
  NodePtr xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (xn->data[i] > 0.0) xn->grad[i] += self.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  std::vector<double> out(static_cast<size_t>(x.size()));
  for (int64_t i = 0; i < x.size(); ++i) {
    double v = x.values()[static_cast<size_t>(i)];
    out[static_cast<size_t>(i)] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  NodePtr xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double v = xn->data[i];
      double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      xn->grad[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// shape
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel(new_shape) != x.size()) {
    std::ostringstream os;
    os << "reshape: cannot view " << shape_str(x.shape()) << " as " << shape_str(new_shape);
    throw ShapeError(os.str());
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  NodePtr xn = x.node();
  return make_op(std::move(new_shape), std::move(out), {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x, std::vector<int> perm) {
  const Shape& in_shape = x.shape();
  const size_t rank = in_shape.size();
  if (perm.size() != rank) throw ShapeError("transpose: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  Shape out_shape(rank);
  for (size_t d = 0; d < rank; ++d) {
    int p = perm[d];
    if (p < 0 || static_cast<size_t>(p) >= rank || seen[static_cast<size_t>(p)])
      throw ShapeError("transpose: invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    out_shape[d] = in_shape[static_cast<size_t>(p)];
  }
  auto in_strides = strides_of(in_shape);
  // source stride to advance when out axis d increments
  std::vector<int64_t> src_stride(rank);
  for (size_t d = 0; d < rank; ++d) src_stride[d] = in_strides[static_cast<size_t>(perm[d])];

  const int64_t n = x.size();
  std::vector<double> out(static_cast<size_t>(n));
  std::vector<int64_t> out_to_in(static_cast<size_t>(n));
  std::vector<int64_t> idx(rank, 0);
  int64_t src = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    out[static_cast<size_t>(flat)] = x.values()[static_cast<size_t>(src)];
    out_to_in[static_cast<size_t>(flat)] = src;
    for (size_t d = rank; d-- > 0;) {
      idx[d]++;
      src += src_stride[d];
      if (idx[d] < out_shape[d]) break;
      src -= src_stride[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  NodePtr xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {xn},
                 [xn, map = std::move(out_to_in)](TensorNode& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (size_t i = 0; i < self.grad.size(); ++i)
                     xn->grad[static_cast<size_t>(map[i])] += self.grad[i];
                 });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const size_t rank = parts[0].shape().size();
  int a = normalize_axis(axis, rank, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[static_cast<size_t>(a)] = 0;
  for (const auto& p : parts) {
    if (p.shape().size() != rank) throw ShapeError("concat: rank mismatch");
    for (size_t d = 0; d < rank; ++d) {
      if (static_cast<int>(d) != a && p.shape()[d] != parts[0].shape()[d]) {
        std::ostringstream os;
        os << "concat: shape mismatch " << shape_str(p.shape()) << " vs " << shape_str(parts[0].shape());
        throw ShapeError(os.str());
      }
    }
    out_shape[static_cast<size_t>(a)] += p.shape()[static_cast<size_t>(a)];
  }

  auto split = lane_split(out_shape, a);
  std::vector<double> out(static_cast<size_t>(numel(out_shape)));
  std::vector<NodePtr> parents;
  std::vector<int64_t> part_n;
  for (const auto& p : parts) {
    parents.push_back(p.node());
    part_n.push_back(p.shape()[static_cast<size_t>(a)]);
  }
  int64_t axis_off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& src = parts[pi].values();
    for (int64_t o = 0; o < split.outer; ++o) {
      const int64_t rows = part_n[pi] * split.inner;
      std::copy_n(src.begin() + o * rows, rows,
                  out.begin() + (o * split.n + axis_off) * split.inner);
    }
    axis_off += part_n[pi];
  }
  return make_op(std::move(out_shape), std::move(out), std::move(parents),
                 [part_n, split](TensorNode& self) {
                   int64_t off = 0;
                   for (size_t pi = 0; pi < self.parents.size(); ++pi) {
                     auto& p = *self.parents[pi];
                     if (p.requires_grad) {
                       p.ensure_grad();
                       for (int64_t o = 0; o < split.outer; ++o) {
                         const int64_t rows = part_n[pi] * split.inner;
                         const double* g = self.grad.data() + (o * split.n + off) * split.inner;
                         double* dst = p.grad.data() + o * rows;
                         for (int64_t i = 0; i < rows; ++i) dst[i] += g[i];
                       }
                     }
                     off += part_n[pi];
                   }
                 });
}

// ---------------------------------------------------------------------------
// contractions
// ---------------------------------------------------------------------------

namespace {

// C(m,n) += A(m,k) * B(k,n)
void gemm_acc_nn(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    double* c_row = C + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double a = a_row[kk];
      const double* b_row = B + kk * n;
      for (int64_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// C(m,k) += G(m,n) * B(k,n)^T
void gemm_acc_nt(const double* G, const double* B, double* C, int64_t m, int64_t n, int64_t k) {
  for (int64_t i = 0; i < m; ++i) {
    const double* g_row = G + i * n;
    double* c_row = C + i * k;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double* b_row = B + kk * n;
      double s = 0.0;
      for (int64_t j = 0; j < n; ++j) s += g_row[j] * b_row[j];
      c_row[kk] += s;
    }
  }
}

// C(k,n) += A(m,k)^T * G(m,n)
void gemm_acc_tn(const double* A, const double* G, double* C, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* a_row = A + i * k;
    const double* g_row = G + i * n;
    for (int64_t kk = 0; kk < k; ++kk) {
      const double a = a_row[kk];
      if (a == 0.0) continue;
      double* c_row = C + kk * n;
      for (int64_t j = 0; j < n; ++j) c_row[j] += a * g_row[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fail = [&] {
    std::ostringstream os;
    os << "matmul: incompatible shapes " << shape_str(sa) << " and " << shape_str(sb);
    throw ShapeError(os.str());
  };
  if (sa.size() < 2 || sa.size() != sb.size()) fail();
  const size_t rank = sa.size();
  for (size_t d = 0; d + 2 < rank; ++d)
    if (sa[d] != sb[d]) fail();
  const int64_t m = sa[rank - 2], k = sa[rank - 1];
  const int64_t k2 = sb[rank - 2], n = sb[rank - 1];
  if (k != k2) fail();
  int64_t batch = 1;
  for (size_t d = 0; d + 2 < rank; ++d) batch *= sa[d];

  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<size_t>(batch * m * n), 0.0);
  for (int64_t bo = 0; bo < batch; ++bo)
    gemm_acc_nn(a.values().data() + bo * m * k, b.values().data() + bo * k * n,
                out.data() + bo * m * n, m, k, n);

  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(out_shape), std::move(out), {an, bn},
                 [an, bn, batch, m, k, n](TensorNode& self) {
                   for (int64_t bo = 0; bo < batch; ++bo) {
                     const double* g = self.grad.data() + bo * m * n;
                     if (an->requires_grad) {
                       an->ensure_grad();
                       gemm_acc_nt(g, bn->data.data() + bo * k * n, an->grad.data() + bo * m * k, m, n, k);
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       gemm_acc_tn(an->data.data() + bo * m * k, g, bn->grad.data() + bo * k * n, m, k, n);
                     }
                   }
                 });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sx.empty() || sw.size() != 2 || bias.shape().size() != 1) {
    throw ShapeError("linear: expected x (..., d_in), weight (d_in, d_out), bias (d_out)");
  }
  const int64_t d_in = sx.back(), d_out = sw[1];
  if (sw[0] != d_in || bias.shape()[0] != d_out) {
    std::ostringstream os;
    os << "linear: dimension mismatch x " << shape_str(sx) << ", weight " << shape_str(sw)
       << ", bias " << shape_str(bias.shape());
    throw ShapeError(os.str());
  }
  const int64_t rows = x.size() / d_in;
  Shape out_shape(sx.begin(), sx.end() - 1);
  out_shape.push_back(d_out);

  std::vector<double> out(static_cast<size_t>(rows * d_out));
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(bias.values().begin(), d_out, out.begin() + r * d_out);
  gemm_acc_nn(x.values().data(), weight.values().data(), out.data(), rows, d_in, d_out);

  NodePtr xn = x.node(), wn = weight.node(), bn = bias.node();
  return make_op(std::move(out_shape), std::move(out), {xn, wn, bn},
                 [xn, wn, bn, rows, d_in, d_out](TensorNode& self) {
                   const double* g = self.grad.data();
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     gemm_acc_nt(g, wn->data.data(), xn->grad.data(), rows, d_out, d_in);
                   }
                   if (wn->requires_grad) {
                     wn->ensure_grad();
                     gemm_acc_tn(xn->data.data(), g, wn->grad.data(), rows, d_in, d_out);
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (int64_t r = 0; r < rows; ++r)
                       for (int64_t j = 0; j < d_out; ++j) bn->grad[static_cast<size_t>(j)] += g[r * d_out + j];
                   }
                 });
}

// ---------------------------------------------------------------------------
// softmax family, layer norm
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
  int a = normalize_axis(axis, x.shape().size(), "softmax");
  auto split = lane_split(x.shape(), a);
  std::vector<double> out(static_cast<size_t>(x.size()));
  const auto& xd = x.values();
  for (int64_t o = 0; o < split.outer; ++o) {
    for (int64_t in = 0; in < split.inner; ++in) {
      const int64_t base = o * split.n * split.inner + in;
      double mx = xd[static_cast<size_t>(base)];
      for (int64_t i = 1; i < split.n; ++i)
        mx = std::max(mx, xd[static_cast<size_t>(base + i * split.inner)]);
      double s = 0.0;
      for (int64_t i = 0; i < split.n; ++i) {
        double e = std::exp(xd[static_cast<size_t>(base + i * split.inner)] - mx);
        out[static_cast<size_t>(base + i * split.inner)] = e;
        s += e;
      }
      const double inv = 1.0 / s;
      for (int64_t i = 0; i < split.n; ++i) out[static_cast<size_t>(base + i * split.inner)] *= inv;
    }
  }
  NodePtr xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn, split](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int64_t o = 0; o < split.outer; ++o) {
      for (int64_t in = 0; in < split.inner; ++in) {
        const int64_t base = o * split.n * split.inner + in;
        double dot = 0.0;
        for (int64_t i = 0; i < split.n; ++i) {
          const size_t p = static_cast<size_t>(base + i * split.inner);
          dot += self.grad[p] * self.data[p];
        }
        for (int64_t i = 0; i < split.n; ++i) {
          const size_t p = static_cast<size_t>(base + i * split.inner);
          xn->grad[p] += self.data[p] * (self.grad[p] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& x, int axis) {
  int a = normalize_axis(axis, x.shape().size(), "log_softmax");
  auto split = lane_split(x.shape(), a);
  std::vector<double> out(static_cast<size_t>(x.size()));
  const auto& xd = x.values();
  for (int64_t o = 0; o < split.outer; ++o) {
    for (int64_t in = 0; in < split.inner; ++in) {
      const int64_t base = o * split.n * split.inner + in;
      double mx = xd[static_cast<size_t>(base)];
      for (int64_t i = 1; i < split.n; ++i)
        mx = std::max(mx, xd[static_cast<size_t>(base + i * split.inner)]);
      double s = 0.0;
      for (int64_t i = 0; i < split.n; ++i)
        s += std::exp(xd[static_cast<size_t>(base + i * split.inner)] - mx);
      const double lse = mx + std::log(s);
      for (int64_t i = 0; i < split.n; ++i) {
        const size_t p = static_cast<size_t>(base + i * split.inner);
        out[p] = xd[p] - lse;
      }
    }
  }
  NodePtr xn = x.node();
  return make_op(x.shape(), std::move(out), {xn}, [xn, split](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int64_t o = 0; o < split.outer; ++o) {
      for (int64_t in = 0; in < split.inner; ++in) {
        const int64_t base = o * split.n * split.inner + in;
        double gsum = 0.0;
        for (int64_t i = 0; i < split.n; ++i)
          gsum += self.grad[static_cast<size_t>(base + i * split.inner)];
        for (int64_t i = 0; i < split.n; ++i) {
          const size_t p = static_cast<size_t>(base + i * split.inner);
          xn->grad[p] += self.grad[p] - std::exp(self.data[p]) * gsum;
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Shape& sx = x.shape();
  if (sx.empty()) throw ShapeError("layer_norm: scalar input");
  const int64_t d = sx.back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    std::ostringstream os;
    os << "layer_norm: gain " << shape_str(gain.shape()) << " / bias " << shape_str(bias.shape())
       << " do not match last axis of " << shape_str(sx);
    throw ShapeError(os.str());
  }
  const int64_t rows = x.size() / d;
  std::vector<double> out(static_cast<size_t>(x.size()));
  std::vector<double> mu(static_cast<size_t>(rows)), inv_std(static_cast<size_t>(rows));
  const auto& xd = x.values();
  const auto& gd = gain.values();
  const auto& bd = bias.values();
  for (int64_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * d;
    double m = 0.0;
    for (int64_t i = 0; i < d; ++i) m += row[i];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) var += (row[i] - m) * (row[i] - m);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    mu[static_cast<size_t>(r)] = m;
    inv_std[static_cast<size_t>(r)] = inv;
    double* orow = out.data() + r * d;
    for (int64_t i = 0; i < d; ++i) orow[i] = gd[static_cast<size_t>(i)] * (row[i] - m) * inv + bd[static_cast<size_t>(i)];
  }
  NodePtr xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_op(sx, std::move(out), {xn, gn, bn},
                 [xn, gn, bn, rows, d, mu = std::move(mu), inv_std = std::move(inv_std)](TensorNode& self) {
                   std::vector<double> xhat(static_cast<size_t>(d)), dxhat(static_cast<size_t>(d));
                   for (int64_t r = 0; r < rows; ++r) {
                     const double* xrow = xn->data.data() + r * d;
                     const double* g = self.grad.data() + r * d;
                     const double m = mu[static_cast<size_t>(r)];
                     const double inv = inv_std[static_cast<size_t>(r)];
                     for (int64_t i = 0; i < d; ++i) {
                       xhat[static_cast<size_t>(i)] = (xrow[i] - m) * inv;
                       dxhat[static_cast<size_t>(i)] = g[i] * gn->data[static_cast<size_t>(i)];
                     }
                     if (gn->requires_grad) {
                       gn->ensure_grad();
                       for (int64_t i = 0; i < d; ++i) gn->grad[static_cast<size_t>(i)] += g[i] * xhat[static_cast<size_t>(i)];
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       for (int64_t i = 0; i < d; ++i) bn->grad[static_cast<size_t>(i)] += g[i];
                     }
                     if (xn->requires_grad) {
                       xn->ensure_grad();
                       double m1 = 0.0, m2 = 0.0;
                       for (int64_t i = 0; i < d; ++i) {
                         m1 += dxhat[static_cast<size_t>(i)];
                         m2 += dxhat[static_cast<size_t>(i)] * xhat[static_cast<size_t>(i)];
                       }
                       m1 /= static_cast<double>(d);
                       m2 /= static_cast<double>(d);
                       double* dx = xn->grad.data() + r * d;
                       for (int64_t i = 0; i < d; ++i)
                         dx[i] += inv * (dxhat[static_cast<size_t>(i)] - m1 - xhat[static_cast<size_t>(i)] * m2);
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  NodePtr xn = x.node();
  return make_op({1}, {s}, {xn}, [xn](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = self.grad[0];
    for (auto& v : xn->grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double inv_n = 1.0 / static_cast<double>(x.size());
  NodePtr xn = x.node();
  return make_op({1}, {s * inv_n}, {xn}, [xn, inv_n](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const double g = self.grad[0] * inv_n;
    for (auto& v : xn->grad) v += g;
  });
}

namespace {

Tensor reduce_axis(const Tensor& x, int axis, bool take_mean, const char* op) {
  int a = normalize_axis(axis, x.shape().size(), op);
  auto split = lane_split(x.shape(), a);
  Shape out_shape;
  for (size_t d = 0; d < x.shape().size(); ++d)
    if (static_cast<int>(d) != a) out_shape.push_back(x.shape()[d]);
  if (out_shape.empty()) out_shape.push_back(1);
  const double scale = take_mean ? 1.0 / static_cast<double>(split.n) : 1.0;

  std::vector<double> out(static_cast<size_t>(split.outer * split.inner), 0.0);
  const auto& xd = x.values();
  for (int64_t o = 0; o < split.outer; ++o)
    for (int64_t i = 0; i < split.n; ++i)
      for (int64_t in = 0; in < split.inner; ++in)
        out[static_cast<size_t>(o * split.inner + in)] +=
            xd[static_cast<size_t>((o * split.n + i) * split.inner + in)];
  if (take_mean)
    for (auto& v : out) v *= scale;

  NodePtr xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {xn}, [xn, split, scale](TensorNode& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int64_t o = 0; o < split.outer; ++o)
      for (int64_t i = 0; i < split.n; ++i)
        for (int64_t in = 0; in < split.inner; ++in)
          xn->grad[static_cast<size_t>((o * split.n + i) * split.inner + in)] +=
              self.grad[static_cast<size_t>(o * split.inner + in)] * scale;
  });
}

}  // namespace

Tensor sum_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, false, "sum_axis"); }
Tensor mean_axis(const Tensor& x, int axis) { return reduce_axis(x, axis, true, "mean_axis"); }

// ---------------------------------------------------------------------------
// row selection
// ---------------------------------------------------------------------------

Tensor gather_rows(const Tensor& x, std::vector<int64_t> rows) {
  if (x.shape().size() != 2) throw ShapeError("gather_rows: expected a 2-d tensor, got " + shape_str(x.shape()));
  const int64_t n = x.shape()[0], d = x.shape()[1];
  for (int64_t r : rows)
    if (r < 0 || r >= n) throw ShapeError("gather_rows: row index out of range");
  std::vector<double> out(rows.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(x.values().begin() + rows[i] * d, d, out.begin() + static_cast<int64_t>(i) * d);
  NodePtr xn = x.node();
  return make_op({static_cast<int64_t>(rows.size()), d}, std::move(out), {xn},
                 [xn, d, rows = std::move(rows)](TensorNode& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (size_t i = 0; i < rows.size(); ++i) {
                     const double* g = self.grad.data() + static_cast<int64_t>(i) * d;
                     double* dst = xn->grad.data() + rows[i] * d;
                     for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                   }
                 });
}

Tensor assemble_rows(const Tensor& visible, const Tensor& fill, std::vector<int64_t> slot) {
  if (visible.shape().size() != 2) throw ShapeError("assemble_rows: visible must be 2-d");
  const int64_t nv = visible.shape()[0], d = visible.shape()[1];
  if (fill.shape() != Shape{d})
    throw ShapeError("assemble_rows: fill shape " + shape_str(fill.shape()) + " must be (" + std::to_string(d) + ")");
  for (int64_t s : slot)
    if (s < -1 || s >= nv) throw ShapeError("assemble_rows: slot index out of range");
  std::vector<double> out(slot.size() * static_cast<size_t>(d));
  for (size_t r = 0; r < slot.size(); ++r) {
    const auto src = slot[r] >= 0 ? visible.values().subspan(static_cast<size_t>(slot[r] * d), static_cast<size_t>(d))
                                  : fill.values();
    std::copy_n(src.begin(), d, out.begin() + static_cast<int64_t>(r) * d);
  }
  NodePtr vn = visible.node(), fn = fill.node();
  return make_op({static_cast<int64_t>(slot.size()), d}, std::move(out), {vn, fn},
                 [vn, fn, d, slot = std::move(slot)](TensorNode& self) {
                   for (size_t r = 0; r < slot.size(); ++r) {
                     const double* g = self.grad.data() + static_cast<int64_t>(r) * d;
                     if (slot[r] >= 0) {
                       if (!vn->requires_grad) continue;
                       vn->ensure_grad();
                       double* dst = vn->grad.data() + slot[r] * d;
                       for (int64_t j = 0; j < d; ++j) dst[j] += g[j];
                     } else {
                       if (!fn->requires_grad) continue;
                       fn->ensure_grad();
                       for (int64_t j = 0; j < d; ++j) fn->grad[static_cast<size_t>(j)] += g[j];
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  TensorNode* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing differentiable upstream

  // Post-order DFS (iterative); emits parents before children, so the reverse
  // of `topo` visits each node exactly once in reverse topological order.
  std::vector<TensorNode*> topo;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    size_t next;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

std::vector<double> finite_diff_grad(const std::function<double(const Tensor&)>& f,
                                     const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: h must be positive");
  std::vector<double> base(x.values().begin(), x.values().end());
  std::vector<double> g(base.size());
  for (size_t i = 0; i < base.size(); ++i) {
    std::vector<double> plus = base, minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor::from_data(x.shape(), std::move(plus), false));
    const double fm = f(Tensor::from_data(x.shape(), std::move(minus), false));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace skelmae
