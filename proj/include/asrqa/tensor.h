#ifndef ASRQA_TENSOR_H
#define ASRQA_TENSOR_H

#include <functional>
#include <memory>
#include <vector>

#include "asrqa/common.h"

// Reverse-mode automatic differentiation over dense rank-0/1/2 tensors.
// Tensors are immutable once created; ops build a DAG through shared parent
// links and backward() walks it in reverse topological order. No
// broadcasting: shape agreement is explicit everywhere.

namespace asrqa {

namespace detail {
struct Node {
  std::vector<int> shape;
  std::shared_ptr<const std::vector<double>> values;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // adds d(loss)/d(parent) into parents
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static Tensor from(std::vector<int> shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor zeros(const std::vector<int>& shape,
                      bool requires_grad = false);
  static Tensor full(const std::vector<int>& shape, double v,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor uniform(const std::vector<int>& shape, double lo, double hi,
                        Rng& rng, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t size() const { return node_->values->size(); }
  int dim(int i) const { return node_->shape[i]; }
  int rows() const;  // rank-2 only
  int cols() const;

  const std::vector<double>& data() const { return *node_->values; }
  double at(std::size_t i) const { return (*node_->values)[i]; }
  double at(int i, int j) const;
  double scalar_value() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  // Leaf sharing this tensor's value payload but with its own gradient slot.
  // Lets independent per-example graphs read one parameter set without
  // racing on grad accumulation.
  Tensor alias_leaf(bool requires_grad = true) const;
  // Constant leaf view (no gradient flows through it).
  Tensor detached() const;
  // Values rounded through 32-bit float precision (checkpoint payload grid).
  Tensor snapped_to_f32() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Matrix products. matmul_nt(a, b) computes a * b^T without materializing
// the transpose.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matvec(const Tensor& a, const Tensor& x);   // [m x n] * [n] -> [m]
Tensor vecmat(const Tensor& x, const Tensor& a);   // [m] * [m x n] -> [n]
// Column j of a scaled by d[j]; the diagonal-matrix product without the
// k x k materialization.
Tensor scale_columns(const Tensor& a, const Tensor& d);

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int start, int len);  // rank-1
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Stable softmax. For rank-2, axis selects the normalized dimension
// (axis 1 = within each row). mask, when given, matches x's shape with
// entries in {0,1}; masked-out positions get exactly 0. A fully masked
// slice raises MaskError.
Tensor softmax(const Tensor& x, int axis = -1, const Tensor* mask = nullptr);
Tensor log_softmax(const Tensor& x);  // rank-1

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids,
                   int frozen_id = -1);
Tensor stack_rows(const std::vector<Tensor>& rows);
Tensor take_row(const Tensor& x, int row);
Tensor pick(const Tensor& x, int index);  // rank-1 -> scalar

// Populates grad on every requires_grad tensor reachable from loss.
// Repeated calls without zero_grad accumulate on leaves.
void backward(const Tensor& loss);

// Max relative error between analytic gradients of f and central
// differences, over every coordinate of every input.
double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                  const std::vector<Tensor>& inputs, double eps = 1e-5);

}  // namespace asrqa

#endif
