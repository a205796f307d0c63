#pragma once

// Internal graph machinery shared by tensor.cpp and ops.cpp.

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dinomm/tensor.hpp"

namespace dinomm {

struct Tensor::Node {
  Shape shape;
  Array value;
  Array grad;  // sized lazily; kept only on leaves after backward
  bool requires_grad{false};
  bool leaf{false};
  std::uint64_t seq{0};
  // Only grad-requiring inputs; constant inputs live in the closure.
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> back;
  const char* op{"leaf"};
};

std::uint64_t next_node_seq();
Tensor make_leaf(Shape shape, Array values, bool requires_grad);

// Builds an op node: value is the forward result, back pulls self.grad into
// the grad-requiring inputs. The node is recorded only if some input
// requires grad; otherwise back is dropped.
Tensor make_op(const char* name, Shape shape, Array value, const std::vector<Tensor>& inputs,
               std::function<void(Tensor::Node&)> back);

// Adds g into the node's gradient buffer, allocating zeros on first touch.
inline void accumulate_grad(const std::shared_ptr<Tensor::Node>& n, const Array& g) {
  if (n->grad.size() != n->value.size()) n->grad = Array::Zero(n->value.size());
  n->grad += g;
}

inline Array& grad_buffer(const std::shared_ptr<Tensor::Node>& n) {
  if (n->grad.size() != n->value.size()) n->grad = Array::Zero(n->value.size());
  return n->grad;
}

}  // namespace dinomm
