#include <cmath>
#include <utility>

#include "dinomm/tensor.hpp"
#include "tensor_node.hpp"

namespace dinomm {

namespace {

using Node = Tensor::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void check_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

void check_finite(const Array& v, const char* op) {
  if (!v.isFinite().all()) throw NumericError(std::string(op) + ": produced a non-finite value");
}

int normalize_axis(int axis, Index ndim, const char* op) {
  const int nd = static_cast<int>(ndim);
  const int ax = axis < 0 ? axis + nd : axis;
  if (ax < 0 || ax >= nd) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " + std::to_string(nd));
  }
  return ax;
}

struct AxisView {
  Index outer, k, inner;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) v.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

// True when `small` (leading 1s dropped) equals the trailing dims of `big`,
// so broadcasting is a whole-array tile of contiguous chunks.
bool is_suffix_tile(const Shape& big, const Shape& small) {
  std::size_t lead = 0;
  while (lead < small.size() && small[lead] == 1) ++lead;
  const std::size_t ns = small.size() - lead;
  if (ns > big.size()) return false;
  for (std::size_t i = 0; i < ns; ++i) {
    if (small[lead + i] != big[big.size() - ns + i]) return false;
  }
  return true;
}

// Element strides of `s` right-aligned under `out`; 0 marks broadcast dims.
std::vector<Index> bcast_strides(const Shape& s, const Shape& out) {
  std::vector<Index> strides(s.size());
  Index acc = 1;
  for (std::size_t i = s.size(); i > 0; --i) {
    strides[i - 1] = acc;
    acc *= s[i - 1];
  }
  std::vector<Index> st(out.size(), 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto j = static_cast<std::ptrdiff_t>(i) + static_cast<std::ptrdiff_t>(s.size()) - static_cast<std::ptrdiff_t>(out.size());
    if (j < 0) continue;
    const std::size_t js = static_cast<std::size_t>(j);
    st[i] = (s[js] == 1 && out[i] != 1) ? 0 : strides[js];
  }
  return st;
}

template <class F>
void walk_strided(const Shape& out, const std::vector<Index>& st, F&& f) {
  const Index n = shape_numel(out);
  const int nd = static_cast<int>(out.size());
  std::vector<Index> idx(static_cast<std::size_t>(nd), 0);
  Index off = 0;
  for (Index i = 0; i < n; ++i) {
    f(i, off);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[static_cast<std::size_t>(d)];
      off += st[static_cast<std::size_t>(d)];
      if (idx[static_cast<std::size_t>(d)] < out[static_cast<std::size_t>(d)]) break;
      off -= st[static_cast<std::size_t>(d)] * out[static_cast<std::size_t>(d)];
      idx[static_cast<std::size_t>(d)] = 0;
    }
  }
}

template <class F>
void walk_strided2(const Shape& out, const std::vector<Index>& sa, const std::vector<Index>& sb, F&& f) {
  const Index n = shape_numel(out);
  const int nd = static_cast<int>(out.size());
  std::vector<Index> idx(static_cast<std::size_t>(nd), 0);
  Index oa = 0, ob = 0;
  for (Index i = 0; i < n; ++i) {
    f(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      const auto ds = static_cast<std::size_t>(d);
      ++idx[ds];
      oa += sa[ds];
      ob += sb[ds];
      if (idx[ds] < out[ds]) break;
      oa -= sa[ds] * out[ds];
      ob -= sb[ds] * out[ds];
      idx[ds] = 0;
    }
  }
}

Array expand_values(const Array& v, const Shape& from, const Shape& to) {
  if (from == to) return v;
  Array out(shape_numel(to));
  if (is_suffix_tile(to, from)) {
    const Index k = v.size();
    const Index reps = out.size() / k;
    for (Index r = 0; r < reps; ++r) out.segment(r * k, k) = v;
  } else {
    const auto st = bcast_strides(from, to);
    walk_strided(to, st, [&](Index i, Index off) { out[i] = v[off]; });
  }
  return out;
}

// Sums g (laid out as `from`) down to shape `to`, adding into the node grad.
void accumulate_reduced(const NodePtr& n, const Array& g, const Shape& from, const Shape& to) {
  Array& dst = grad_buffer(n);
  if (from == to) {
    dst += g;
    return;
  }
  if (is_suffix_tile(from, to)) {
    const Index k = dst.size();
    const Index reps = g.size() / k;
    for (Index r = 0; r < reps; ++r) dst += g.segment(r * k, k);
    return;
  }
  const auto st = bcast_strides(to, from);
  walk_strided(from, st, [&](Index i, Index off) { dst[off] += g[i]; });
}

}  // namespace

Tensor make_op(const char* name, Shape shape, Array value, const std::vector<Tensor>& inputs,
               std::function<void(Node&)> back) {
  if (finite_checks_enabled()) check_finite(value, name);
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = name;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) node->parents.push_back(t.node());
  }
  if (!node->parents.empty()) {
    node->requires_grad = true;
    node->back = std::move(back);
    node->seq = next_node_seq();
  }
  return Tensor(std::move(node));
}

// ---- elementwise -----------------------------------------------------------

Tensor gelu(const Tensor& x) {
  check_defined(x, "gelu");
  const Array& v = x.values();
  Array phi = v.unaryExpr([](double t) { return 0.5 * std::erfc(-t * 0.7071067811865476); });
  Array y = v * phi;
  NodePtr nx = x.node();
  return make_op("gelu", x.shape(), std::move(y), {x}, [nx, phi = std::move(phi)](Node& self) {
    const double inv_sqrt_2pi = 0.3989422804014327;
    const Array& xv = nx->value;
    accumulate_grad(nx, self.grad * (phi + xv * inv_sqrt_2pi * (-0.5 * xv.square()).exp()));
  });
}

Tensor exp(const Tensor& x) {
  check_defined(x, "exp");
  Array y = x.values().exp();
  NodePtr nx = x.node();
  return make_op("exp", x.shape(), std::move(y), {x},
                 [nx](Node& self) { accumulate_grad(nx, self.grad * self.value); });
}

Tensor log(const Tensor& x) {
  check_defined(x, "log");
  const Array& v = x.values();
  if ((v <= 0.0).any()) {
    double worst = v.minCoeff();
    throw ValueError("log: domain error, smallest element is " + std::to_string(worst));
  }
  Array y = v.log();
  NodePtr nx = x.node();
  return make_op("log", x.shape(), std::move(y), {x},
                 [nx](Node& self) { accumulate_grad(nx, self.grad / nx->value); });
}

Tensor softplus(const Tensor& x) {
  check_defined(x, "softplus");
  Array y = x.values().unaryExpr(
      [](double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); });
  NodePtr nx = x.node();
  return make_op("softplus", x.shape(), std::move(y), {x}, [nx](Node& self) {
    accumulate_grad(nx, self.grad * nx->value.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); }));
  });
}

Tensor scale(const Tensor& x, double s) {
  check_defined(x, "scale");
  Array y = x.values() * s;
  NodePtr nx = x.node();
  return make_op("scale", x.shape(), std::move(y), {x},
                 [nx, s](Node& self) { accumulate_grad(nx, self.grad * s); });
}

Tensor add_scalar(const Tensor& x, double s) {
  check_defined(x, "add_scalar");
  Array y = x.values() + s;
  NodePtr nx = x.node();
  return make_op("add_scalar", x.shape(), std::move(y), {x},
                 [nx](Node& self) { accumulate_grad(nx, self.grad); });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

// ---- broadcasting binaries -------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  const Shape os = broadcast_shapes(a.shape(), b.shape());
  Array y = a.shape() == b.shape()
                ? Array(a.values() + b.values())
                : Array(expand_values(a.values(), a.shape(), os) + expand_values(b.values(), b.shape(), os));
  NodePtr na = a.node(), nb = b.node();
  Shape as = a.shape(), bs = b.shape();
  return make_op("add", os, std::move(y), {a, b}, [na, nb, as, bs](Node& self) {
    if (na->requires_grad) accumulate_reduced(na, self.grad, self.shape, as);
    if (nb->requires_grad) accumulate_reduced(nb, self.grad, self.shape, bs);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_defined(a, "sub");
  check_defined(b, "sub");
  const Shape os = broadcast_shapes(a.shape(), b.shape());
  Array y = a.shape() == b.shape()
                ? Array(a.values() - b.values())
                : Array(expand_values(a.values(), a.shape(), os) - expand_values(b.values(), b.shape(), os));
  NodePtr na = a.node(), nb = b.node();
  Shape as = a.shape(), bs = b.shape();
  return make_op("sub", os, std::move(y), {a, b}, [na, nb, as, bs](Node& self) {
    if (na->requires_grad) accumulate_reduced(na, self.grad, self.shape, as);
    if (nb->requires_grad) accumulate_reduced(nb, (-self.grad).eval(), self.shape, bs);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  const Shape os = broadcast_shapes(a.shape(), b.shape());
  Array y = a.shape() == b.shape()
                ? Array(a.values() * b.values())
                : Array(expand_values(a.values(), a.shape(), os) * expand_values(b.values(), b.shape(), os));
  NodePtr na = a.node(), nb = b.node();
  Shape as = a.shape(), bs = b.shape();
  return make_op("mul", os, std::move(y), {a, b}, [na, nb, as, bs](Node& self) {
    if (na->requires_grad) {
      accumulate_reduced(na, (self.grad * expand_values(nb->value, bs, self.shape)).eval(), self.shape, as);
    }
    if (nb->requires_grad) {
      accumulate_reduced(nb, (self.grad * expand_values(na->value, as, self.shape)).eval(), self.shape, bs);
    }
  });
}

Tensor expand(const Tensor& x, Shape shape) {
  check_defined(x, "expand");
  const Shape os = broadcast_shapes(x.shape(), shape);
  if (os != shape) {
    throw ShapeError("expand: cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Array y = expand_values(x.values(), x.shape(), shape);
  NodePtr nx = x.node();
  Shape xs = x.shape();
  return make_op("expand", std::move(shape), std::move(y), {x}, [nx, xs](Node& self) {
    accumulate_reduced(nx, self.grad, self.shape, xs);
  });
}

// ---- matmul ----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_defined(a, "matmul");
  check_defined(b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || bs.size() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(as) + " x " + shape_str(bs));
  }
  const Index m = as[as.size() - 2], k = as[as.size() - 1];
  const Index kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ: " + shape_str(as) + " x " + shape_str(bs));
  }
  const Shape abatch(as.begin(), as.end() - 2);
  const Shape bbatch(bs.begin(), bs.end() - 2);
  Shape obatch;
  try {
    obatch = broadcast_shapes(abatch, bbatch);
  } catch (const ShapeError&) {
    throw ShapeError("matmul: batch dimensions incompatible: " + shape_str(as) + " x " + shape_str(bs));
  }
  Shape os = obatch;
  os.push_back(m);
  os.push_back(n);
  const Index batches = shape_numel(obatch);
  Array y(batches * m * n);

  const bool b2d = bs.size() == 2;
  if (b2d) {
    ConstMatMap A(a.values().data(), batches * m, k);
    ConstMatMap B(b.values().data(), k, n);
    MatMap(y.data(), batches * m, n).noalias() = A * B;
  } else {
    const auto sta = bcast_strides(abatch, obatch);
    const auto stb = bcast_strides(bbatch, obatch);
    const double* pa = a.values().data();
    const double* pb = b.values().data();
    walk_strided2(obatch, sta, stb, [&](Index i, Index oa, Index ob) {
      ConstMatMap A(pa + oa * m * k, m, k);
      ConstMatMap B(pb + ob * k * n, k, n);
      MatMap(y.data() + i * m * n, m, n).noalias() = A * B;
    });
  }

  NodePtr na = a.node(), nb = b.node();
  return make_op("matmul", std::move(os), std::move(y), {a, b},
                 [na, nb, abatch, bbatch, obatch, m, k, n, b2d, batches](Node& self) {
    const double* pg = self.grad.data();
    if (b2d) {
      ConstMatMap G(pg, batches * m, n);
      if (na->requires_grad) {
        ConstMatMap B(nb->value.data(), k, n);
        MatMap(grad_buffer(na).data(), batches * m, k).noalias() += G * B.transpose();
      }
      if (nb->requires_grad) {
        ConstMatMap A(na->value.data(), batches * m, k);
        MatMap(grad_buffer(nb).data(), k, n).noalias() += A.transpose() * G;
      }
      return;
    }
    const auto sta = bcast_strides(abatch, obatch);
    const auto stb = bcast_strides(bbatch, obatch);
    double* ga = na->requires_grad ? grad_buffer(na).data() : nullptr;
    double* gb = nb->requires_grad ? grad_buffer(nb).data() : nullptr;
    const double* pa = na->value.data();
    const double* pb = nb->value.data();
    walk_strided2(obatch, sta, stb, [&](Index i, Index oa, Index ob) {
      ConstMatMap G(pg + i * m * n, m, n);
      if (ga) {
        ConstMatMap B(pb + ob * k * n, k, n);
        MatMap(ga + oa * m * k, m, k).noalias() += G * B.transpose();
      }
      if (gb) {
        ConstMatMap A(pa + oa * m * k, m, k);
        MatMap(gb + ob * k * n, k, n).noalias() += A.transpose() * G;
      }
    });
  });
}

// ---- softmax family --------------------------------------------------------

Tensor softmax(const Tensor& z, double temperature, int axis) {
  check_defined(z, "softmax");
  if (!(temperature > 0.0)) {
    throw ValueError("softmax: temperature must be > 0, got " + std::to_string(temperature));
  }
  const int ax = normalize_axis(axis, z.ndim(), "softmax");
  const AxisView view = axis_view(z.shape(), ax);
  const Array& v = z.values();
  Array p(v.size());
  if (view.inner == 1) {
    for (Index o = 0; o < view.outer; ++o) {
      const Array w = v.segment(o * view.k, view.k) / temperature;
      const Array e = (w - w.maxCoeff()).exp();
      p.segment(o * view.k, view.k) = e / e.sum();
    }
  } else {
    Array lane(view.k);
    for (Index o = 0; o < view.outer; ++o) {
      for (Index i = 0; i < view.inner; ++i) {
        const Index base = o * view.k * view.inner + i;
        for (Index kk = 0; kk < view.k; ++kk) lane[kk] = v[base + kk * view.inner] / temperature;
        const Array e = (lane - lane.maxCoeff()).exp();
        const double denom = e.sum();
        for (Index kk = 0; kk < view.k; ++kk) p[base + kk * view.inner] = e[kk] / denom;
      }
    }
  }
  NodePtr nz = z.node();
  return make_op("softmax", z.shape(), std::move(p), {z}, [nz, view, temperature](Node& self) {
    Array& dst = grad_buffer(nz);
    if (view.inner == 1) {
      for (Index o = 0; o < view.outer; ++o) {
        const auto pr = self.value.segment(o * view.k, view.k);
        const auto gr = self.grad.segment(o * view.k, view.k);
        const double dot = (pr * gr).sum();
        dst.segment(o * view.k, view.k) += pr * (gr - dot) / temperature;
      }
    } else {
      for (Index o = 0; o < view.outer; ++o) {
        for (Index i = 0; i < view.inner; ++i) {
          const Index base = o * view.k * view.inner + i;
          double dot = 0;
          for (Index kk = 0; kk < view.k; ++kk) {
            dot += self.value[base + kk * view.inner] * self.grad[base + kk * view.inner];
          }
          for (Index kk = 0; kk < view.k; ++kk) {
            const Index at = base + kk * view.inner;
            dst[at] += self.value[at] * (self.grad[at] - dot) / temperature;
          }
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& z, double temperature, int axis) {
  check_defined(z, "log_softmax");
  if (!(temperature > 0.0)) {
    throw ValueError("log_softmax: temperature must be > 0, got " + std::to_string(temperature));
  }
  const int ax = normalize_axis(axis, z.ndim(), "log_softmax");
  const AxisView view = axis_view(z.shape(), ax);
  if (view.inner != 1) throw ShapeError("log_softmax: only the last axis is supported");
  const Array& v = z.values();
  Array l(v.size());
  for (Index o = 0; o < view.outer; ++o) {
    const Array w = v.segment(o * view.k, view.k) / temperature;
    const double mx = w.maxCoeff();
    const double lse = std::log((w - mx).exp().sum());
    l.segment(o * view.k, view.k) = w - mx - lse;
  }
  NodePtr nz = z.node();
  return make_op("log_softmax", z.shape(), std::move(l), {z}, [nz, view, temperature](Node& self) {
    Array& dst = grad_buffer(nz);
    for (Index o = 0; o < view.outer; ++o) {
      const auto lr = self.value.segment(o * view.k, view.k);
      const auto gr = self.grad.segment(o * view.k, view.k);
      const double gsum = gr.sum();
      dst.segment(o * view.k, view.k) += (gr - lr.exp() * gsum) / temperature;
    }
  });
}

// ---- layer_norm ------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  check_defined(x, "layer_norm");
  check_defined(gain, "layer_norm");
  check_defined(bias, "layer_norm");
  if (!(eps > 0.0)) throw ValueError("layer_norm: eps must be > 0");
  const Shape& xs = x.shape();
  const Index d = xs.back();
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(d) + "], got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const Index rows = x.size() / d;
  const Array& v = x.values();
  const Array& g = gain.values();
  const Array& b = bias.values();
  Array y(v.size());
  Array xhat(v.size());
  Array inv(rows);
  for (Index r = 0; r < rows; ++r) {
    const auto seg = v.segment(r * d, d);
    const double mu = seg.mean();
    const Array c = seg - mu;
    const double var = c.square().sum() / static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    xhat.segment(r * d, d) = c * iv;
    y.segment(r * d, d) = g * xhat.segment(r * d, d) + b;
    inv[r] = iv;
  }
  NodePtr nx = x.node(), ng = gain.node(), nb = bias.node();
  return make_op("layer_norm", xs, std::move(y), {x, gain, bias},
                 [nx, ng, nb, xhat = std::move(xhat), inv = std::move(inv), d, rows](Node& self) {
    const Array& gv = ng->value;
    for (Index r = 0; r < rows; ++r) {
      const auto dy = self.grad.segment(r * d, d);
      const auto xh = xhat.segment(r * d, d);
      if (ng->requires_grad) grad_buffer(ng) += dy * xh;
      if (nb->requires_grad) grad_buffer(nb) += dy;
      if (nx->requires_grad) {
        const Array dyg = dy * gv;
        const double m1 = dyg.mean();
        const double m2 = (dyg * xh).mean();
        grad_buffer(nx).segment(r * d, d) += inv[r] * (dyg - m1 - xh * m2);
      }
    }
  });
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  Array y(1);
  y[0] = x.values().sum();
  NodePtr nx = x.node();
  return make_op("sum", {1}, std::move(y), {x},
                 [nx](Node& self) { grad_buffer(nx) += self.grad[0]; });
}

Tensor mean(const Tensor& x) {
  check_defined(x, "mean");
  const double n = static_cast<double>(x.size());
  Array y(1);
  y[0] = x.values().sum() / n;
  NodePtr nx = x.node();
  return make_op("mean", {1}, std::move(y), {x},
                 [nx, n](Node& self) { grad_buffer(nx) += self.grad[0] / n; });
}

namespace {

Tensor axis_reduce(const char* name, const Tensor& x, int axis, bool take_mean) {
  check_defined(x, name);
  const int ax = normalize_axis(axis, x.ndim(), name);
  const AxisView view = axis_view(x.shape(), ax);
  Shape os;
  for (Index i = 0; i < x.ndim(); ++i) {
    if (i != ax) os.push_back(x.dim(i));
  }
  if (os.empty()) os.push_back(1);
  const double factor = take_mean ? 1.0 / static_cast<double>(view.k) : 1.0;
  const Array& v = x.values();
  Array y = Array::Zero(view.outer * view.inner);
  for (Index o = 0; o < view.outer; ++o) {
    for (Index kk = 0; kk < view.k; ++kk) {
      y.segment(o * view.inner, view.inner) += v.segment((o * view.k + kk) * view.inner, view.inner);
    }
  }
  if (take_mean) y *= factor;
  NodePtr nx = x.node();
  return make_op(name, std::move(os), std::move(y), {x}, [nx, view, factor](Node& self) {
    Array& dst = grad_buffer(nx);
    for (Index o = 0; o < view.outer; ++o) {
      const auto gseg = self.grad.segment(o * view.inner, view.inner);
      for (Index kk = 0; kk < view.k; ++kk) {
        dst.segment((o * view.k + kk) * view.inner, view.inner) += gseg * factor;
      }
    }
  });
}

}  // namespace

Tensor sum(const Tensor& x, int axis) { return axis_reduce("sum_axis", x, axis, false); }
Tensor mean(const Tensor& x, int axis) { return axis_reduce("mean_axis", x, axis, true); }

// ---- shape ops -------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: needs at least one input");
  for (const Tensor& t : parts) check_defined(t, "concat");
  const Shape& first = parts[0].shape();
  const int ax = normalize_axis(axis, parts[0].ndim(), "concat");
  Index total = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) {
      throw ShapeError("concat: rank mismatch between " + shape_str(first) + " and " + shape_str(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != first[i]) {
        throw ShapeError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                         " differ outside axis " + std::to_string(ax));
      }
    }
    total += s[static_cast<std::size_t>(ax)];
  }
  Shape os = first;
  os[static_cast<std::size_t>(ax)] = total;
  const AxisView view = axis_view(os, ax);
  Array y(shape_numel(os));
  std::vector<Index> ks;
  Index off = 0;
  for (const Tensor& t : parts) {
    const Index kp = t.dim(ax);
    ks.push_back(kp);
    const Array& v = t.values();
    for (Index o = 0; o < view.outer; ++o) {
      y.segment((o * total + off) * view.inner, kp * view.inner) = v.segment(o * kp * view.inner, kp * view.inner);
    }
    off += kp;
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& t : parts) nodes.push_back(t.node());
  return make_op("concat", std::move(os), std::move(y), parts,
                 [nodes, ks = std::move(ks), view, total](Node& self) {
    Index off = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      const Index kp = ks[p];
      if (nodes[p]->requires_grad) {
        Array& dst = grad_buffer(nodes[p]);
        for (Index o = 0; o < view.outer; ++o) {
          dst.segment(o * kp * view.inner, kp * view.inner) +=
              self.grad.segment((o * total + off) * view.inner, kp * view.inner);
        }
      }
      off += kp;
    }
  });
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
  check_defined(x, "slice");
  const int ax = normalize_axis(axis, x.ndim(), "slice");
  const Index k = x.dim(ax);
  if (length < 1 || start < 0 || start + length > k) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid for axis extent " + std::to_string(k));
  }
  const AxisView view = axis_view(x.shape(), ax);
  Shape os = x.shape();
  os[static_cast<std::size_t>(ax)] = length;
  Array y(shape_numel(os));
  const Array& v = x.values();
  for (Index o = 0; o < view.outer; ++o) {
    y.segment(o * length * view.inner, length * view.inner) =
        v.segment((o * k + start) * view.inner, length * view.inner);
  }
  NodePtr nx = x.node();
  return make_op("slice", std::move(os), std::move(y), {x}, [nx, view, k, start, length](Node& self) {
    Array& dst = grad_buffer(nx);
    for (Index o = 0; o < view.outer; ++o) {
      dst.segment((o * k + start) * view.inner, length * view.inner) +=
          self.grad.segment(o * length * view.inner, length * view.inner);
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_defined(x, "reshape");
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("reshape: invalid target shape " + shape_str(shape));
  }
  Array y = x.values();
  NodePtr nx = x.node();
  return make_op("reshape", std::move(shape), std::move(y), {x},
                 [nx](Node& self) { grad_buffer(nx) += self.grad; });
}

Tensor transpose(const Tensor& x, const std::vector<int>& perm) {
  check_defined(x, "transpose");
  const Shape& xs = x.shape();
  const std::size_t nd = xs.size();
  if (perm.size() != nd) {
    throw ShapeError("transpose: permutation size " + std::to_string(perm.size()) + " for rank " + std::to_string(nd));
  }
  std::vector<bool> used(nd, false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= nd || used[static_cast<std::size_t>(p)]) {
      throw ShapeError("transpose: invalid permutation");
    }
    used[static_cast<std::size_t>(p)] = true;
  }
  std::vector<Index> xstrides(nd);
  Index acc = 1;
  for (std::size_t i = nd; i > 0; --i) {
    xstrides[i - 1] = acc;
    acc *= xs[i - 1];
  }
  Shape os(nd);
  std::vector<Index> st(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    os[i] = xs[static_cast<std::size_t>(perm[i])];
    st[i] = xstrides[static_cast<std::size_t>(perm[i])];
  }
  Array y(x.size());
  const Array& v = x.values();
  walk_strided(os, st, [&](Index i, Index off) { y[i] = v[off]; });
  NodePtr nx = x.node();
  return make_op("transpose", os, std::move(y), {x}, [nx, os, st](Node& self) {
    Array& dst = grad_buffer(nx);
    walk_strided(os, st, [&](Index i, Index off) { dst[off] += self.grad[i]; });
  });
}

// ---- l2_normalize ----------------------------------------------------------

Tensor l2_normalize(const Tensor& x, double eps) {
  check_defined(x, "l2_normalize");
  if (!(eps > 0.0)) throw ValueError("l2_normalize: eps must be > 0");
  const Index d = x.shape().back();
  const Index rows = x.size() / d;
  const Array& v = x.values();
  Array y(v.size());
  Array norms(rows);
  for (Index r = 0; r < rows; ++r) {
    const auto seg = v.segment(r * d, d);
    const double nn = std::sqrt(seg.square().sum());
    norms[r] = nn;
    y.segment(r * d, d) = seg / std::max(nn, eps);
  }
  NodePtr nx = x.node();
  return make_op("l2_normalize", x.shape(), std::move(y), {x},
                 [nx, norms = std::move(norms), d, rows, eps](Node& self) {
    Array& dst = grad_buffer(nx);
    for (Index r = 0; r < rows; ++r) {
      const auto yr = self.value.segment(r * d, d);
      const auto gr = self.grad.segment(r * d, d);
      if (norms[r] > eps) {
        const double dot = (yr * gr).sum();
        dst.segment(r * d, d) += (gr - yr * dot) / norms[r];
      } else {
        dst.segment(r * d, d) += gr / eps;
      }
    }
  });
}

// ---- bilinear resize -------------------------------------------------------

namespace {

struct Lerp {
  Index i0, i1;
  double f;
};

std::vector<Lerp> lerp_table(Index in, Index out) {
  std::vector<Lerp> table(static_cast<std::size_t>(out));
  for (Index i = 0; i < out; ++i) {
    const double src = out == 1 ? 0.0
                                : static_cast<double>(i) * static_cast<double>(in - 1) /
                                      static_cast<double>(out - 1);
    const Index i0 = static_cast<Index>(std::floor(src));
    table[static_cast<std::size_t>(i)] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return table;
}

}  // namespace

Tensor bilinear_resize_hw(const Tensor& x, Index out_h, Index out_w) {
  check_defined(x, "bilinear_resize_hw");
  if (x.ndim() != 3) throw ShapeError("bilinear_resize_hw: expected [H, W, D], got " + shape_str(x.shape()));
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize_hw: output extents must be positive");
  const Index h = x.dim(0), w = x.dim(1), d = x.dim(2);
  NodePtr nx = x.node();
  if (out_h == h && out_w == w) {
    Array y = x.values();
    return make_op("bilinear_resize_hw", x.shape(), std::move(y), {x},
                   [nx](Node& self) { grad_buffer(nx) += self.grad; });
  }
  const auto th = lerp_table(h, out_h);
  const auto tw = lerp_table(w, out_w);
  Array y(out_h * out_w * d);
  const Array& v = x.values();
  for (Index i = 0; i < out_h; ++i) {
    const Lerp& li = th[static_cast<std::size_t>(i)];
    for (Index j = 0; j < out_w; ++j) {
      const Lerp& lj = tw[static_cast<std::size_t>(j)];
      y.segment((i * out_w + j) * d, d) =
          (1.0 - li.f) * (1.0 - lj.f) * v.segment((li.i0 * w + lj.i0) * d, d) +
          (1.0 - li.f) * lj.f * v.segment((li.i0 * w + lj.i1) * d, d) +
          li.f * (1.0 - lj.f) * v.segment((li.i1 * w + lj.i0) * d, d) +
          li.f * lj.f * v.segment((li.i1 * w + lj.i1) * d, d);
    }
  }
  return make_op("bilinear_resize_hw", {out_h, out_w, d}, std::move(y), {x},
                 [nx, th, tw, out_h, out_w, w, d](Node& self) {
    Array& dst = grad_buffer(nx);
    for (Index i = 0; i < out_h; ++i) {
      const Lerp& li = th[static_cast<std::size_t>(i)];
      for (Index j = 0; j < out_w; ++j) {
        const Lerp& lj = tw[static_cast<std::size_t>(j)];
        const auto g = self.grad.segment((i * out_w + j) * d, d);
        dst.segment((li.i0 * w + lj.i0) * d, d) += (1.0 - li.f) * (1.0 - lj.f) * g;
        dst.segment((li.i0 * w + lj.i1) * d, d) += (1.0 - li.f) * lj.f * g;
        dst.segment((li.i1 * w + lj.i0) * d, d) += li.f * (1.0 - lj.f) * g;
        dst.segment((li.i1 * w + lj.i1) * d, d) += li.f * lj.f * g;
      }
    }
  });
}

}  // namespace dinomm
