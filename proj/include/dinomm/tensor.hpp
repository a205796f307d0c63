#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "dinomm/error.hpp"

namespace dinomm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shapes_equal(const Shape& a, const Shape& b);
// NumPy broadcasting rules; throws ShapeError naming both shapes.
Shape broadcast_shapes(const Shape& a, const Shape& b);

// Dense f64 array with shape metadata and reverse-mode autodiff. Values are
// immutable once created; ops return fresh tensors and record the graph
// needed to pull gradients back to leaves. The one mutation door is
// values_mut() on leaves, for optimizer updates between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  // Constant: participates in ops but never receives gradient.
  static Tensor from_data(Shape shape, Array values);
  static Tensor from_values(Shape shape, const std::vector<double>& values);
  static Tensor scalar(double value);
  // Trainable leaf: gradients accumulate across backward calls until cleared.
  static Tensor param(Shape shape, Array values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  Index ndim() const { return static_cast<Index>(shape().size()); }
  Index size() const;
  Index dim(Index axis) const;

  const Array& values() const;
  // Leaves only; bypasses immutability for in-place parameter updates.
  Array& values_mut();

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  const Array& grad() const;
  void clear_grad();

  double item() const;
  double at(std::initializer_list<Index> idx) const;

  struct Node;
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode accumulation from a scalar produced by recorded ops.
// Node order is the reverse of creation order, which is a valid reverse
// topological order because every op is created after its inputs.
void backward(const Tensor& loss);

// Same values, no history: gradients never flow through the result.
Tensor detach(const Tensor& t);

// When enabled, every op output is scanned and non-finite values raise
// NumericError at the op that produced them. Off by default (full scans).
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- operations ------------------------------------------------------------

// Batched matrix product. a: [..., m, k], b: [..., k, n]; leading batch dims
// broadcast. A 2D b collapses to one GEMM over flattened leading dims.
Tensor matmul(const Tensor& a, const Tensor& b);

// Max-shifted softmax of z / temperature along axis (negative counts from
// the back). Rows sum to 1 exactly as computed, no renormalization epsilon.
Tensor softmax(const Tensor& z, double temperature, int axis = -1);
Tensor log_softmax(const Tensor& z, double temperature, int axis = -1);

// Normalizes over the last axis with population variance, then applies
// per-feature gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-6);

// Exact erf form: x * Phi(x).
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);
// Domain-checked: any element <= 0 raises ValueError.
Tensor log(const Tensor& x);
// log(1 + e^x), computed without overflow for large |x|.
Tensor softplus(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, Index start, Index length);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
// Broadcast to a larger shape (implemented as x + zeros(shape)).
Tensor expand(const Tensor& x, Shape shape);

// Unit-normalizes along the last axis. Rows with norm <= eps are divided by
// eps instead, so the zero row maps to zero with a well-defined gradient.
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

// Bilinear resize of the leading two axes of [H, W, D], align-corners
// convention: output corners sample input corners exactly, and H==Ht, W==Wt
// is the identity.
Tensor bilinear_resize_hw(const Tensor& x, Index out_h, Index out_w);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return scale(x, s); }
inline Tensor operator*(const Tensor& x, double s) { return scale(x, s); }
inline Tensor operator-(const Tensor& x) { return neg(x); }

}  // namespace dinomm
