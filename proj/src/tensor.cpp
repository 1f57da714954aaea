#include "fpliif/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "fpliif/errors.hpp"

namespace fpliif {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array data, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  for (Index e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + to_string(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("shape " + to_string(shape) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  const Index n = numel(shape);
  return Tensor(std::move(shape), Array::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_values(Shape shape, std::initializer_list<Scalar> values,
                                           bool requires_grad) {
  Array a(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), a.data());
  return Tensor(std::move(shape), std::move(a), requires_grad);
}

template <typename Scalar>
const Shape& Tensor<Scalar>::shape() const {
  return node_->shape;
}

template <typename Scalar>
Index Tensor<Scalar>::dim(int axis) const {
  const int n = ndim();
  if (axis < 0) axis += n;
  if (axis < 0 || axis >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Index Tensor<Scalar>::size() const {
  return node_->data.size();
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Tensor<Scalar>::data() const {
  return node_->data;
}

template <typename Scalar>
typename Tensor<Scalar>::Array& Tensor<Scalar>::data() {
  return node_->data;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) {
    throw DimensionError("item() needs a single element, shape is " + to_string(shape()));
  }
  return node_->data(0);
}

template <typename Scalar>
bool Tensor<Scalar>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool on) {
  node_->requires_grad = on;
}

template <typename Scalar>
bool Tensor<Scalar>::has_grad() const {
  return node_->has_grad;
}

template <typename Scalar>
const typename Tensor<Scalar>::Array& Tensor<Scalar>::grad() const {
  if (!node_->has_grad) throw ContractError("tensor has no gradient (" + node_->op + ")");
  return node_->grad;
}

template <typename Scalar>
typename Tensor<Scalar>::Array& Tensor<Scalar>::grad_storage() {
  if (!node_->has_grad) {
    node_->grad = Array::Zero(node_->data.size());
    node_->has_grad = true;
  }
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  node_->grad.resize(0);
  node_->has_grad = false;
}

template <typename Scalar>
void Tensor<Scalar>::backward() {
  if (!node_->requires_grad) {
    throw ContractError("backward: loss is detached from any tensor that requires grad");
  }
  if (node_->released) {
    throw ContractError("backward: graph already released by a previous backward; run forward again");
  }
  if (size() != 1) {
    throw ContractError("backward: loss must be scalar, shape is " + to_string(shape()));
  }

  // Iterative post-order DFS gives a topological order (inputs before users).
  // Owning pointers: releasing a parent's inputs must not free queued nodes.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const std::shared_ptr<Node>& child = node->inputs[next++].node_;
      if (child->released) {
        throw ContractError("backward: part of the graph (" + child->op +
                            ") was already released by a previous backward");
      }
      if (child->requires_grad && child->backward && !visited.count(child.get())) {
        visited.insert(child.get());
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (const auto& n : order) {
    n->grad = Array::Zero(n->data.size());
    n->has_grad = true;
  }
  node_->grad.setOnes();

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = it->get();
    if (n->backward) n->backward(n->grad, std::span<Tensor>(n->inputs));
    n->backward = nullptr;
    n->inputs.clear();
    n->released = true;
  }
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  Tensor out(node_->shape, node_->data, false);
  return out;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  return Tensor(node_->shape, node_->data, node_->requires_grad);
}

template <typename Scalar>
const std::string& Tensor<Scalar>::op_name() const {
  return node_->op;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::make_result(Shape shape, Array data, std::vector<Tensor> inputs,
                                           BackwardFn backward, std::string op) {
  Tensor out(std::move(shape), std::move(data), false);
  out.node_->op = std::move(op);
  if (!grad_enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->inputs = std::move(inputs);
  out.node_->backward = std::move(backward);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace fpliif
