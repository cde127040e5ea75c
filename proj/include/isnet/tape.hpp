#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "isnet/tensor.hpp"

namespace isnet {

// A named model tensor. Trainable parameters receive gradients; buffers
// (normalization running statistics) only travel through checkpoints.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  bool decay = true;  // subject to weight decay

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool train = true, bool wd = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train), decay(wd) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Tape;

// Handle to a tensor recorded on a Tape. Only valid while the tape lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; zeros if nothing flowed here.
  Tensor<T> grad() const;

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Define-by-run record of differentiable operations. One tape per forward
// pass; not shared across threads.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output and accumulates into inputs.
  using BackwardFn = std::function<void(const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value);
  Var<T> parameter(Parameter<T>& p);

  // Records an op result. The backward closure is kept only if some input
  // requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward);
  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn backward);

  // Reverse sweep from a scalar loss. Parameter gradients are accumulated
  // into the bound Parameter::grad.
  void backward(Var<T> loss);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  // Lazily zero-initialized gradient slot used by backward closures.
  Tensor<T>& grad_slot(const Var<T>& v);
  Tensor<T> grad(std::size_t id) const;

  std::size_t size() const { return nodes_.size(); }
  // Node ids whose backward closure ran, in the order they ran.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    bool is_leaf = false;
    BackwardFn backward;
    Parameter<T>* sink = nullptr;
  };

  Var<T> push(Node node);

  std::deque<Node> nodes_;
  std::vector<std::size_t> trace_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape_->value(id_);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape_->requires_grad(id_);
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  return tape_->grad(id_);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace isnet
