#include "dinomm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "tensor_node.hpp"

namespace dinomm {

namespace {

std::atomic<std::uint64_t> g_seq{1};
std::atomic<bool> g_finite_checks{false};

void check_shape_dims(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("invalid shape " + shape_str(shape) + ": all extents must be positive");
  }
  if (shape.empty()) throw ShapeError("invalid shape []: rank must be >= 1");
}

}  // namespace

std::uint64_t next_node_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }
bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

bool shapes_equal(const Shape& a, const Shape& b) { return a == b; }

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t nd = std::max(a.size(), b.size());
  Shape out(nd, 1);
  for (std::size_t i = 0; i < nd; ++i) {
    const Index da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const Index db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[nd - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor make_leaf(Shape shape, Array values, bool requires_grad) {
  check_shape_dims(shape);
  if (values.size() != shape_numel(shape)) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<Tensor::Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  node->leaf = true;
  node->op = requires_grad ? "param" : "const";
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) {
  check_shape_dims(shape);
  Array v = Array::Zero(shape_numel(shape));
  return make_leaf(std::move(shape), std::move(v), false);
}

Tensor Tensor::full(Shape shape, double value) {
  check_shape_dims(shape);
  Array v = Array::Constant(shape_numel(shape), value);
  return make_leaf(std::move(shape), std::move(v), false);
}

Tensor Tensor::from_data(Shape shape, Array values) {
  return make_leaf(std::move(shape), std::move(values), false);
}

Tensor Tensor::from_values(Shape shape, const std::vector<double>& values) {
  Array v(static_cast<Index>(values.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = values[static_cast<std::size_t>(i)];
  return make_leaf(std::move(shape), std::move(v), false);
}

Tensor Tensor::scalar(double value) { return from_data({1}, Array::Constant(1, value)); }

Tensor Tensor::param(Shape shape, Array values) {
  return make_leaf(std::move(shape), std::move(values), true);
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("shape() on undefined tensor");
  return node_->shape;
}

Index Tensor::size() const { return shape_numel(shape()); }

Index Tensor::dim(Index axis) const {
  const Shape& s = shape();
  if (axis < 0 || axis >= static_cast<Index>(s.size())) {
    throw ShapeError("dim axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(axis)];
}

const Array& Tensor::values() const {
  if (!node_) throw ContractError("values() on undefined tensor");
  return node_->value;
}

Array& Tensor::values_mut() {
  if (!node_) throw ContractError("values_mut() on undefined tensor");
  if (!node_->leaf) throw ContractError("values_mut() is restricted to leaf tensors");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && node_->grad.size() == node_->value.size() && node_->grad.size() > 0; }

const Array& Tensor::grad() const {
  if (!has_grad()) throw ContractError("grad() called but no gradient has been accumulated");
  return node_->grad;
}

void Tensor::clear_grad() {
  if (node_) node_->grad.resize(0);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() requires a single-element tensor, got " + shape_str(shape()));
  return values()[0];
}

double Tensor::at(std::initializer_list<Index> idx) const {
  const Shape& s = shape();
  if (static_cast<Index>(idx.size()) != ndim()) {
    throw ShapeError("at(): " + std::to_string(idx.size()) + " indices for " + shape_str(s));
  }
  Index off = 0;
  std::size_t d = 0;
  for (Index i : idx) {
    if (i < 0 || i >= s[d]) throw ShapeError("at(): index " + std::to_string(i) + " out of range for " + shape_str(s));
    off = off * s[d] + i;
    ++d;
  }
  return values()[off];
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward: undefined tensor");
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  const auto& root = loss.node();
  if (!root->requires_grad || !root->back) {
    throw ContractError("backward: loss records no operations (constant, leaf, or already backpropagated)");
  }

  // Collect the grad-requiring subgraph. Parents are recorded only for
  // inputs that require grad, so this reaches exactly the relevant nodes.
  std::vector<std::shared_ptr<Tensor::Node>> nodes;
  std::unordered_set<const Tensor::Node*> seen;
  std::vector<std::shared_ptr<Tensor::Node>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p);
    }
    nodes.push_back(std::move(n));
  }

  // Creation order is a topological order (ops are created after their
  // inputs), so descending seq is a valid reverse order.
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });

  root->grad = Array::Ones(1);
  for (const auto& n : nodes) {
    if (!n->back) continue;
    if (n->grad.size() != n->value.size()) n->grad = Array::Zero(n->value.size());
    n->back(*n);
    n->back = nullptr;
    n->grad.resize(0);
  }
}

Tensor detach(const Tensor& t) {
  if (!t.defined()) throw ContractError("detach: undefined tensor");
  return Tensor::from_data(t.shape(), t.values());
}

}  // namespace dinomm
