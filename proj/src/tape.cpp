#include "isnet/tape.hpp"

#include "isnet/error.hpp"

namespace isnet {

template <typename T>
Var<T> Tape<T>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_leaf = true;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.is_leaf = true;
  n.sink = p.trainable ? &p : nullptr;
  return push(std::move(n));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var<T>>(inputs), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var<T>& in : inputs) {
    if (&in.tape() != this) throw UsageError("operand recorded on a different tape");
    if (nodes_[in.id()].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Tape<T>::grad_slot(const Var<T>& v) {
  Node& n = nodes_[v.id()];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
Tensor<T> Tape<T>::grad(std::size_t id) const {
  const Node& n = nodes_[id];
  return n.has_grad ? n.grad : Tensor<T>(n.value.shape());
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (&loss.tape() != this) throw UsageError("loss was recorded on a different tape");
  Node& root = nodes_[loss.id()];
  if (root.value.size() != 1)
    throw UsageError("backward requires a scalar loss, got shape " + to_string(root.value.shape()));
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor<T>();
  }
  trace_.clear();
  root.grad = Tensor<T>(root.value.shape(), T{1});
  root.has_grad = true;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    trace_.push_back(i);
    n.backward(n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.is_leaf || !n.requires_grad) continue;
    if (!n.has_grad) {
      n.grad = Tensor<T>(n.value.shape());
      n.has_grad = true;
    }
    if (n.sink) {
      Tensor<T>& g = n.sink->grad;
      if (g.shape() != n.grad.shape()) g = Tensor<T>(n.grad.shape());
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += n.grad[k];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace isnet
