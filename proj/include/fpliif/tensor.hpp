#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fpliif {

using Index = std::int64_t;
using Shape = std::vector<Index>;

std::string to_string(const Shape& shape);
Index numel(const Shape& shape);

// Gradient recording is on by default; NoGradGuard turns it off for the
// current thread (inference, finite differences).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reference-counted n-dimensional array with optional reverse-mode gradient
/// tracking. Copies share storage; use clone() for a deep copy.
///
/// Elements are stored row-major (last extent fastest). Image-like data uses
/// N x C x H x W.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  // Receives the gradient w.r.t. this node's output and the node's inputs;
  // accumulates into every input that requires grad.
  using BackwardFn = std::function<void(const Array& grad_out, std::span<Tensor> inputs)>;

  Tensor() = default;
  Tensor(Shape shape, Array data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::initializer_list<Scalar> values,
                            bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const { return static_cast<int>(shape().size()); }
  Index dim(int axis) const;
  Index size() const;

  const Array& data() const;
  // Writable storage, for optimizers and finite-difference probes. Writing
  // through this while a graph that saved the tensor is alive invalidates
  // that graph's backward.
  Array& data();
  Scalar item() const;
  Scalar operator[](Index i) const { return data()(i); }

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  const Array& grad() const;
  // Zero-initialized on first access.
  Array& grad_storage();
  void zero_grad();

  // Backpropagates from a scalar. Leaf gradients accumulate across calls;
  // the recorded graph is released afterwards, so a second call on the same
  // loss without a new forward pass throws ContractError.
  void backward();

  Tensor detach() const;
  Tensor clone() const;
  const std::string& op_name() const;

  // Wraps an op's output. Records a graph node only when recording is on
  // and at least one input requires grad.
  static Tensor make_result(Shape shape, Array data, std::vector<Tensor> inputs,
                            BackwardFn backward, std::string op);

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  struct Node;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

template <typename Scalar>
struct Tensor<Scalar>::Node {
  Shape shape;
  Array data;
  Array grad;
  bool requires_grad = false;
  bool has_grad = false;
  bool released = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
  std::string op = "leaf";
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// Element-type conversion; the result is a fresh leaf.
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  return Tensor<To>(t.shape(), t.data().template cast<To>(), false);
}

}  // namespace fpliif
