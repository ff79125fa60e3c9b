#include "asrqa/tensor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

#include "asrqa/kernels.h"

namespace asrqa {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_elems(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

NodePtr make_leaf(std::vector<int> shape, std::vector<double> data,
                  bool requires_grad) {
  if (shape_elems(shape) != data.size())
    throw ShapeError(fmt("data length %zu does not match shape %s",
                         data.size(), shape_str(shape).c_str()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::make_shared<const std::vector<double>>(std::move(data));
  n->requires_grad = requires_grad;
  return n;
}

// Builds an op node. parents drive requires_grad; backprop is dropped when
// nothing upstream wants gradients.
Tensor make_op(std::vector<int> shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(Node&)> backprop) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::make_shared<const std::vector<double>>(std::move(data));
  for (const Tensor& p : parents) {
    n->parents.push_back(p.node());
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) n->backprop = std::move(backprop);
  return Tensor(n);
}

void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.values->size(), 0.0);
}

void expect_rank(const Tensor& t, int r, const char* what) {
  if (t.rank() != r)
    throw ShapeError(fmt("%s: expected rank-%d tensor, got shape %s", what, r,
                         shape_str(t.shape()).c_str()));
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(fmt("%s: shape mismatch %s vs %s", what,
                         shape_str(a.shape()).c_str(),
                         shape_str(b.shape()).c_str()));
}

constexpr double kMaskFill = -1e9;

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data,
                    bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  return from(shape, std::vector<double>(shape_elems(shape), 0.0),
              requires_grad);
}

Tensor Tensor::full(const std::vector<int>& shape, double v,
                    bool requires_grad) {
  return from(shape, std::vector<double>(shape_elems(shape), v),
              requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({}, {v}, requires_grad);
}

Tensor Tensor::uniform(const std::vector<int>& shape, double lo, double hi,
                       Rng& rng, bool requires_grad) {
  std::vector<double> d(shape_elems(shape));
  for (double& v : d) v = asrqa::uniform(rng, lo, hi);
  return from(shape, std::move(d), requires_grad);
}

int Tensor::rows() const {
  expect_rank(*this, 2, "rows");
  return node_->shape[0];
}

int Tensor::cols() const {
  expect_rank(*this, 2, "cols");
  return node_->shape[1];
}

double Tensor::at(int i, int j) const {
  return (*node_->values)[static_cast<std::size_t>(i) * cols() + j];
}

double Tensor::scalar_value() const {
  if (size() != 1)
    throw ShapeError("scalar_value on tensor of shape " +
                     shape_str(node_->shape));
  return (*node_->values)[0];
}

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty())
    throw std::logic_error("grad read before backward populated it");
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::alias_leaf(bool requires_grad) const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->values = node_->values;
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::detached() const { return alias_leaf(false); }

Tensor Tensor::snapped_to_f32() const {
  std::vector<double> d(size());
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] = static_cast<double>(static_cast<float>(at(i)));
  return from(shape(), std::move(d), requires_grad());
}

// ------------------------------------------------------------- products

Tensor matmul(const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "matmul");
  expect_rank(b, 2, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError(fmt("matmul: inner dimensions disagree, %s vs %s",
                         shape_str(a.shape()).c_str(),
                         shape_str(b.shape()).c_str()));
  int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul_nn(a.data().data(), b.data().data(), out.data(), m, k, n,
                     false);
  auto an = a.node(), bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      ensure_grad(*an);
      kernels::matmul_nt(g, bn->values->data(), an->grad.data(), m, n, k,
                         true);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      kernels::matmul_tn(an->values->data(), g, bn->grad.data(), k, m, n,
                         true);
    }
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  expect_rank(a, 2, "matmul_nt");
  expect_rank(b, 2, "matmul_nt");
  if (a.cols() != b.cols())
    throw ShapeError(fmt("matmul_nt: inner dimensions disagree, %s vs %s",
                         shape_str(a.shape()).c_str(),
                         shape_str(b.shape()).c_str()));
  int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul_nt(a.data().data(), b.data().data(), out.data(), m, k, n,
                     false);
  auto an = a.node(), bn = b.node();
  return make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      ensure_grad(*an);
      kernels::matmul_nn(g, bn->values->data(), an->grad.data(), m, n, k,
                         true);
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      kernels::matmul_tn(g, an->values->data(), bn->grad.data(), n, m, k,
                         true);
    }
  });
}

Tensor matvec(const Tensor& a, const Tensor& x) {
  expect_rank(a, 2, "matvec");
  expect_rank(x, 1, "matvec");
  if (a.cols() != x.dim(0))
    throw ShapeError(fmt("matvec: %s vs %s", shape_str(a.shape()).c_str(),
                         shape_str(x.shape()).c_str()));
  int m = a.rows(), n = a.cols();
  std::vector<double> out(m);
  kernels::matmul_nn(a.data().data(), x.data().data(), out.data(), m, n, 1,
                     false);
  auto an = a.node(), xn = x.node();
  return make_op({m}, std::move(out), {a, x}, [an, xn, m, n](Node& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      ensure_grad(*an);
      const double* xv = xn->values->data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<std::size_t>(i) * n + j] += g[i] * xv[j];
    }
    if (xn->requires_grad) {
      ensure_grad(*xn);
      kernels::matmul_tn(an->values->data(), g, xn->grad.data(), n, m, 1,
                         true);
    }
  });
}

Tensor vecmat(const Tensor& x, const Tensor& a) {
  expect_rank(x, 1, "vecmat");
  expect_rank(a, 2, "vecmat");
  if (x.dim(0) != a.rows())
    throw ShapeError(fmt("vecmat: %s vs %s", shape_str(x.shape()).c_str(),
                         shape_str(a.shape()).c_str()));
  int m = a.rows(), n = a.cols();
  std::vector<double> out(n);
  kernels::matmul_nn(x.data().data(), a.data().data(), out.data(), 1, m, n,
                     false);
  auto xn = x.node(), an = a.node();
  return make_op({n}, std::move(out), {x, a}, [xn, an, m, n](Node& self) {
    const double* g = self.grad.data();
    if (xn->requires_grad) {
      ensure_grad(*xn);
      kernels::matmul_nn(an->values->data(), g, xn->grad.data(), m, n, 1,
                         true);
    }
    if (an->requires_grad) {
      ensure_grad(*an);
      const double* xv = xn->values->data();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          an->grad[static_cast<std::size_t>(i) * n + j] += xv[i] * g[j];
    }
  });
}

Tensor scale_columns(const Tensor& a, const Tensor& d) {
  expect_rank(a, 2, "scale_columns");
  expect_rank(d, 1, "scale_columns");
  if (a.cols() != d.dim(0))
    throw ShapeError(fmt("scale_columns: %s vs %s",
                         shape_str(a.shape()).c_str(),
                         shape_str(d.shape()).c_str()));
  int m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  const double* av = a.data().data();
  const double* dv = d.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      std::size_t idx = static_cast<std::size_t>(i) * n + j;
      out[idx] = av[idx] * dv[j];
    }
  auto an = a.node(), dn = d.node();
  return make_op({m, n}, std::move(out), {a, d}, [an, dn, m, n](Node& self) {
    const double* g = self.grad.data();
    const double* av = an->values->data();
    const double* dv = dn->values->data();
    if (an->requires_grad) {
      ensure_grad(*an);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          std::size_t idx = static_cast<std::size_t>(i) * n + j;
          an->grad[idx] += g[idx] * dv[j];
        }
    }
    if (dn->requires_grad) {
      ensure_grad(*dn);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
          std::size_t idx = static_cast<std::size_t>(i) * n + j;
          dn->grad[j] += g[idx] * av[idx];
        }
    }
  });
}

// ----------------------------------------------------------- elementwise

namespace {

using kernels::serial::Unary;

Tensor unary_op(const Tensor& x, Unary fwd, Unary grad_from_input) {
  std::vector<double> out(x.size());
  kernels::map_unary(fwd, x.data().data(), out.data(), x.size());
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x},
                 [xn, grad_from_input](Node& self) {
                   if (!xn->requires_grad) return;
                   ensure_grad(*xn);
                   std::size_t n = self.values->size();
                   std::vector<double> d(n);
                   kernels::map_unary(grad_from_input, xn->values->data(),
                                      d.data(), n);
                   for (std::size_t i = 0; i < n; ++i)
                     xn->grad[i] += self.grad[i] * d[i];
                 });
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(x, Unary::Relu, Unary::ReluGrad);
}
Tensor tanh(const Tensor& x) {
  return unary_op(x, Unary::Tanh, Unary::TanhGrad);
}
Tensor sigmoid(const Tensor& x) {
  return unary_op(x, Unary::Sigmoid, Unary::SigmoidGrad);
}

Tensor log(const Tensor& x) {
  std::vector<double> out(x.size());
  kernels::map_unary(Unary::Log, x.data().data(), out.data(), x.size());
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    for (std::size_t i = 0; i < self.values->size(); ++i)
      xn->grad[i] += self.grad[i] / (*xn->values)[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    for (Node* p : {an.get(), bn.get()}) {
      if (!p->requires_grad) continue;
      ensure_grad(*p);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        p->grad[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) - b.at(i);
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      ensure_grad(*an);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
  auto an = a.node(), bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Node& self) {
    if (an->requires_grad) {
      ensure_grad(*an);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * (*bn->values)[i];
    }
    if (bn->requires_grad) {
      ensure_grad(*bn);
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] += self.grad[i] * (*an->values)[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * c;
  auto xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, c](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[i] += self.grad[i] * c;
  });
}

// ----------------------------------------------------- shape rearranging

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  int r = parts[0].rank();
  if (r != 1 && r != 2) throw ShapeError("concat: rank-1 or rank-2 only");
  if (axis < 0 || axis >= r) throw ShapeError(fmt("concat: bad axis %d", axis));
  for (const Tensor& p : parts) {
    if (p.rank() != r) throw ShapeError("concat: mixed ranks");
    for (int d = 0; d < r; ++d)
      if (d != axis && p.dim(d) != parts[0].dim(d))
        throw ShapeError(fmt("concat: off-axis extent mismatch %s vs %s",
                             shape_str(parts[0].shape()).c_str(),
                             shape_str(p.shape()).c_str()));
  }

  if (r == 1 || axis == 0) {
    // Simple payload concatenation (rank-1, or rank-2 stacking rows).
    std::vector<int> shape = parts[0].shape();
    int total = 0;
    for (const Tensor& p : parts) total += p.dim(axis);
    shape[axis] = total;
    std::vector<double> out;
    out.reserve(shape_elems(shape));
    for (const Tensor& p : parts)
      out.insert(out.end(), p.data().begin(), p.data().end());
    auto nodes = std::make_shared<std::vector<NodePtr>>();
    for (const Tensor& p : parts) nodes->push_back(p.node());
    return make_op(shape, std::move(out), parts, [nodes](Node& self) {
      std::size_t off = 0;
      for (const NodePtr& p : *nodes) {
        std::size_t len = p->values->size();
        if (p->requires_grad) {
          ensure_grad(*p);
          for (std::size_t i = 0; i < len; ++i)
            p->grad[i] += self.grad[off + i];
        }
        off += len;
      }
    });
  }

  // rank-2, axis 1: interleave rows.
  int rows = parts[0].dim(0);
  int total_cols = 0;
  for (const Tensor& p : parts) total_cols += p.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows) * total_cols);
  int col0 = 0;
  for (const Tensor& p : parts) {
    int pc = p.dim(1);
    for (int i = 0; i < rows; ++i)
      std::memcpy(&out[static_cast<std::size_t>(i) * total_cols + col0],
                  &p.data()[static_cast<std::size_t>(i) * pc],
                  sizeof(double) * pc);
    col0 += pc;
  }
  auto nodes = std::make_shared<std::vector<NodePtr>>();
  for (const Tensor& p : parts) nodes->push_back(p.node());
  return make_op({rows, total_cols}, std::move(out), parts,
                 [nodes, rows, total_cols](Node& self) {
                   int col0 = 0;
                   for (const NodePtr& p : *nodes) {
                     int pc = p->shape[1];
                     if (p->requires_grad) {
                       ensure_grad(*p);
                       for (int i = 0; i < rows; ++i)
                         for (int j = 0; j < pc; ++j)
                           p->grad[static_cast<std::size_t>(i) * pc + j] +=
                               self.grad[static_cast<std::size_t>(i) *
                                             total_cols +
                                         col0 + j];
                     }
                     col0 += pc;
                   }
                 });
}

Tensor slice(const Tensor& x, int start, int len) {
  expect_rank(x, 1, "slice");
  if (start < 0 || len < 1 || start + len > x.dim(0))
    throw ShapeError(fmt("slice: [%d,%d) out of range for %s", start,
                         start + len, shape_str(x.shape()).c_str()));
  std::vector<double> out(x.data().begin() + start,
                          x.data().begin() + start + len);
  auto xn = x.node();
  return make_op({len}, std::move(out), {x}, [xn, start, len](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    for (int i = 0; i < len; ++i) xn->grad[start + i] += self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.at(i);
  auto xn = x.node();
  return make_op({}, {acc}, {x}, [xn](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    double g = self.grad[0];
    for (double& v : xn->grad) v += g;
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.at(i);
  double inv = 1.0 / static_cast<double>(x.size());
  auto xn = x.node();
  return make_op({}, {acc * inv}, {x}, [xn, inv](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    double g = self.grad[0] * inv;
    for (double& v : xn->grad) v += g;
  });
}

// ---------------------------------------------------------------- softmax

namespace {

// Softmax slices laid out as rows x cols with normalization along cols.
// mask entries are 0/1 per element; masked logits are pushed to kMaskFill
// before the shifted exponentials, then outputs are forced to exact zero.
Tensor softmax_impl(const Tensor& x, int rows, int cols, bool transpose_back,
                    const Tensor* mask) {
  std::vector<double> logits(x.data());
  const std::vector<int> orig_shape = x.shape();
  // Work in row-major rows x cols; transpose first when normalizing axis 0.
  auto index = [&](int r, int c) {
    return transpose_back ? static_cast<std::size_t>(c) * rows + r
                          : static_cast<std::size_t>(r) * cols + c;
  };
  std::vector<double> work(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      work[static_cast<std::size_t>(r) * cols + c] = logits[index(r, c)];

  std::vector<double> mwork;
  if (mask) {
    if (mask->shape() != x.shape())
      throw ShapeError(fmt("softmax: mask shape %s does not match %s",
                           shape_str(mask->shape()).c_str(),
                           shape_str(x.shape()).c_str()));
    mwork.resize(work.size());
    for (int r = 0; r < rows; ++r) {
      bool any = false;
      for (int c = 0; c < cols; ++c) {
        double m = mask->at(index(r, c));
        mwork[static_cast<std::size_t>(r) * cols + c] = m;
        if (m != 0.0) any = true;
      }
      if (!any)
        throw MaskError(fmt("softmax: slice %d fully masked", r));
    }
    for (std::size_t i = 0; i < work.size(); ++i)
      if (mwork[i] == 0.0) work[i] = kMaskFill;
  }

  std::vector<double> y(work.size());
  kernels::softmax_rows(work.data(), y.data(), rows, cols);
  if (mask)
    for (std::size_t i = 0; i < y.size(); ++i)
      if (mwork[i] == 0.0) y[i] = 0.0;

  // Restore the caller's layout.
  std::vector<double> out(y.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[index(r, c)] = y[static_cast<std::size_t>(r) * cols + c];

  auto xn = x.node();
  auto yshared = std::make_shared<std::vector<double>>(std::move(y));
  return make_op(orig_shape, std::move(out), {x},
                 [xn, yshared, rows, cols, transpose_back](Node& self) {
                   if (!xn->requires_grad) return;
                   ensure_grad(*xn);
                   auto index = [&](int r, int c) {
                     return transpose_back
                                ? static_cast<std::size_t>(c) * rows + r
                                : static_cast<std::size_t>(r) * cols + c;
                   };
                   const std::vector<double>& yv = *yshared;
                   for (int r = 0; r < rows; ++r) {
                     double dot = 0.0;
                     for (int c = 0; c < cols; ++c)
                       dot += self.grad[index(r, c)] *
                              yv[static_cast<std::size_t>(r) * cols + c];
                     for (int c = 0; c < cols; ++c) {
                       double yi = yv[static_cast<std::size_t>(r) * cols + c];
                       xn->grad[index(r, c)] +=
                           yi * (self.grad[index(r, c)] - dot);
                     }
                   }
                 });
}

}  // namespace

Tensor softmax(const Tensor& x, int axis, const Tensor* mask) {
  if (x.rank() == 1) {
    if (axis != -1 && axis != 0)
      throw ShapeError(fmt("softmax: bad axis %d for rank-1", axis));
    return softmax_impl(x, 1, x.dim(0), false, mask);
  }
  expect_rank(x, 2, "softmax");
  if (axis == -1) axis = 1;
  if (axis == 1) return softmax_impl(x, x.rows(), x.cols(), false, mask);
  if (axis == 0) return softmax_impl(x, x.cols(), x.rows(), true, mask);
  throw ShapeError(fmt("softmax: bad axis %d", axis));
}

Tensor log_softmax(const Tensor& x) {
  expect_rank(x, 1, "log_softmax");
  int n = x.dim(0);
  double mx = x.at(static_cast<std::size_t>(0));
  for (int i = 1; i < n; ++i) mx = std::max(mx, x.at(static_cast<std::size_t>(i)));
  double z = 0.0;
  for (int i = 0; i < n; ++i) z += std::exp(x.at(static_cast<std::size_t>(i)) - mx);
  double lse = mx + std::log(z);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = x.at(static_cast<std::size_t>(i)) - lse;
  auto xn = x.node();
  auto probs = std::make_shared<std::vector<double>>(n);
  for (int i = 0; i < n; ++i) (*probs)[i] = std::exp(out[i]);
  return make_op({n}, std::move(out), {x}, [xn, probs, n](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    double gsum = 0.0;
    for (int i = 0; i < n; ++i) gsum += self.grad[i];
    for (int i = 0; i < n; ++i)
      xn->grad[i] += self.grad[i] - (*probs)[i] * gsum;
  });
}

// ------------------------------------------------------------- indexing

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids,
                   int frozen_id) {
  expect_rank(table, 2, "gather_rows");
  int v = table.rows(), d = table.cols();
  int n = static_cast<int>(ids.size());
  if (n == 0) throw ShapeError("gather_rows: empty id list");
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ShapeError(fmt("gather_rows: id %d out of range [0,%d)", id, v));
  std::vector<double> out(static_cast<std::size_t>(n) * d);
  for (int r = 0; r < n; ++r)
    std::memcpy(&out[static_cast<std::size_t>(r) * d],
                &table.data()[static_cast<std::size_t>(ids[r]) * d],
                sizeof(double) * d);
  auto tn = table.node();
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return make_op({n, d}, std::move(out), {table},
                 [tn, ids_copy, d, frozen_id](Node& self) {
                   if (!tn->requires_grad) return;
                   ensure_grad(*tn);
                   for (std::size_t r = 0; r < ids_copy->size(); ++r) {
                     int id = (*ids_copy)[r];
                     if (id == frozen_id) continue;
                     for (int j = 0; j < d; ++j)
                       tn->grad[static_cast<std::size_t>(id) * d + j] +=
                           self.grad[r * d + j];
                   }
                 });
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: empty input");
  int d = rows[0].dim(0);
  for (const Tensor& r : rows) {
    expect_rank(r, 1, "stack_rows");
    if (r.dim(0) != d) throw ShapeError("stack_rows: width mismatch");
  }
  int n = static_cast<int>(rows.size());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(n) * d);
  for (const Tensor& r : rows)
    out.insert(out.end(), r.data().begin(), r.data().end());
  auto nodes = std::make_shared<std::vector<NodePtr>>();
  for (const Tensor& r : rows) nodes->push_back(r.node());
  return make_op({n, d}, std::move(out), rows, [nodes, d](Node& self) {
    for (std::size_t r = 0; r < nodes->size(); ++r) {
      Node* p = (*nodes)[r].get();
      if (!p->requires_grad) continue;
      ensure_grad(*p);
      for (int j = 0; j < d; ++j)
        p->grad[j] += self.grad[r * d + j];
    }
  });
}

Tensor take_row(const Tensor& x, int row) {
  expect_rank(x, 2, "take_row");
  int n = x.rows(), d = x.cols();
  if (row < 0 || row >= n)
    throw ShapeError(fmt("take_row: row %d out of range [0,%d)", row, n));
  std::vector<double> out(x.data().begin() + static_cast<std::size_t>(row) * d,
                          x.data().begin() +
                              static_cast<std::size_t>(row + 1) * d);
  auto xn = x.node();
  return make_op({d}, std::move(out), {x}, [xn, row, d](Node& self) {
    if (!xn->requires_grad) return;
    ensure_grad(*xn);
    for (int j = 0; j < d; ++j)
      xn->grad[static_cast<std::size_t>(row) * d + j] += self.grad[j];
  });
}

Tensor pick(const Tensor& x, int index) {
  expect_rank(x, 1, "pick");
  if (index < 0 || index >= x.dim(0))
    throw ShapeError(fmt("pick: index %d out of range [0,%d)", index,
                         x.dim(0)));
  auto xn = x.node();
  return make_op({}, {x.at(static_cast<std::size_t>(index))}, {x},
                 [xn, index](Node& self) {
                   if (!xn->requires_grad) return;
                   ensure_grad(*xn);
                   xn->grad[index] += self.grad[0];
                 });
}

// ---------------------------------------------------------------- backward

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ShapeError("backward: undefined loss");
  if (loss.rank() != 0 || loss.size() != 1)
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     shape_str(loss.shape()));
  Node* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Iterative DFS postorder over grad-requiring nodes; parents precede
  // children in `order`, so the reversed walk sees every consumer of a node
  // before the node itself.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      ++stack.back().second;
      Node* p = node->parents[idx].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Fresh gradients for interior nodes; leaves accumulate across calls.
  for (Node* n : order) {
    if (!n->parents.empty())
      n->grad.assign(n->values->size(), 0.0);
    else
      ensure_grad(*n);
  }
  ensure_grad(*root);
  root->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// --------------------------------------------------------------- gradcheck

double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double eps) {
  std::vector<Tensor> vars;
  vars.reserve(inputs.size());
  for (const Tensor& in : inputs)
    vars.push_back(Tensor::from(in.shape(),
                                std::vector<double>(in.data()), true));
  Tensor out = f(vars);
  if (out.rank() != 0)
    throw ShapeError("grad_check: f must be scalar-valued");
  backward(out);

  double max_rel = 0.0;
  for (std::size_t vi = 0; vi < vars.size(); ++vi) {
    const std::vector<double>& base = vars[vi].data();
    for (std::size_t ci = 0; ci < base.size(); ++ci) {
      auto eval_at = [&](double delta) {
        std::vector<Tensor> probe = vars;
        std::vector<double> d(base);
        d[ci] += delta;
        probe[vi] = Tensor::from(vars[vi].shape(), std::move(d), false);
        return f(probe).scalar_value();
      };
      double numeric = (eval_at(eps) - eval_at(-eps)) / (2.0 * eps);
      double analytic =
          vars[vi].has_grad() ? vars[vi].grad()[ci] : 0.0;
      double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
      max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace asrqa
