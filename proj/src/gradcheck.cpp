#include "dinomm/gradcheck.hpp"

#include <cmath>

#include "dinomm/dino.hpp"
#include "dinomm/rng.hpp"
#include "dinomm/vit.hpp"

namespace dinomm {

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw ValueError("grad_check: step must be positive");
  Tensor xp = Tensor::param(x.shape(), x.values());
  Tensor y = f(xp);
  if (y.size() != 1) throw ContractError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
  backward(y);
  const Array analytic = xp.has_grad() ? xp.grad() : Array(Array::Zero(x.size()));

  const Array& base = x.values();
  double max_err = 0.0;
  for (Index i = 0; i < base.size(); ++i) {
    Array vp = base;
    vp[i] += step;
    Array vm = base;
    vm[i] -= step;
    const double fp = f(Tensor::from_data(x.shape(), std::move(vp))).item();
    const double fm = f(Tensor::from_data(x.shape(), std::move(vm))).item();
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite value at coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    max_err = std::max(max_err, err);
  }
  return max_err;
}

namespace {

Array rand_array(Rng& rng, Index n, double lo, double hi) {
  Array v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

Tensor rand_const(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  const Index n = shape_numel(shape);
  return Tensor::from_data(std::move(shape), rand_array(rng, n, lo, hi));
}

// Scalar readout with fixed random weights, so every output coordinate
// contributes a distinct gradient signal.
Tensor readout(const Tensor& y, Rng rng) {
  return sum(mul(y, rand_const(rng, y.shape())));
}

using OpFn = std::function<Tensor(const Tensor&, Rng&)>;

GradCheckCase op_case(std::string name, Shape in_shape, OpFn op, double lo = -1.0, double hi = 1.0,
                      double tol = 1e-5) {
  return GradCheckCase{std::move(name), tol, [in_shape, op, lo, hi](std::uint64_t seed) {
    Rng rng = Rng::from_seed(seed).split(17);
    Tensor x = rand_const(rng, in_shape, lo, hi);
    Rng aux = rng.split(1);
    Rng ro = rng.split(2);
    return grad_check([&](const Tensor& t) {
      Rng a = aux;
      return readout(op(t, a), ro);
    }, x);
  }};
}

ViTConfig tiny_vit_config() {
  ViTConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.in_channels = 2;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.num_heads = 2;
  cfg.mlp_ratio = 2.0;
  cfg.head_hidden_dim = 8;
  cfg.head_layers = 3;
  cfg.out_dim = 12;
  return cfg;
}

// Cross-entropy against a fixed target through the full encoder and head.
Tensor composite_loss(const ViTConfig& cfg, const ParameterSet& params, const Tensor& images, Rng rng) {
  Tensor logits = forward_logits(cfg, params, images);
  Array t = rand_array(rng, logits.dim(1), 0.05, 1.0);
  t /= t.sum();
  Tensor target = Tensor::from_data({1, logits.dim(1)}, std::move(t));
  return neg(mean(sum(mul(target, log_softmax(logits, 0.1, -1)), 1)));
}

std::vector<GradCheckCase> build_cases() {
  std::vector<GradCheckCase> cases;

  cases.push_back(op_case("matmul_lhs", {3, 4}, [](const Tensor& x, Rng& aux) {
    return matmul(x, rand_const(aux, {4, 2}));
  }));
  cases.push_back(op_case("matmul_rhs", {4, 2}, [](const Tensor& x, Rng& aux) {
    return matmul(rand_const(aux, {3, 4}), x);
  }));
  cases.push_back(op_case("matmul_batched", {2, 2, 3, 4}, [](const Tensor& x, Rng& aux) {
    return matmul(x, rand_const(aux, {2, 2, 4, 2}));
  }));
  cases.push_back(op_case("matmul_batch_bcast", {3, 4}, [](const Tensor& x, Rng& aux) {
    return matmul(reshape(x, {1, 3, 4}), rand_const(aux, {2, 4, 2}));
  }));
  cases.push_back(op_case("softmax", {3, 5}, [](const Tensor& x, Rng&) {
    return softmax(x, 0.37, -1);
  }));
  cases.push_back(op_case("softmax_axis0", {4, 3}, [](const Tensor& x, Rng&) {
    return softmax(x, 1.3, 0);
  }));
  cases.push_back(op_case("log_softmax", {3, 5}, [](const Tensor& x, Rng&) {
    return log_softmax(x, 0.21, -1);
  }));
  cases.push_back(op_case("layer_norm_x", {3, 6}, [](const Tensor& x, Rng& aux) {
    return layer_norm(x, rand_const(aux, {6}, 0.5, 1.5), rand_const(aux, {6}), 1e-5);
  }));
  cases.push_back(op_case("layer_norm_gain", {6}, [](const Tensor& x, Rng& aux) {
    return layer_norm(rand_const(aux, {3, 6}), x, rand_const(aux, {6}), 1e-5);
  }));
  cases.push_back(op_case("layer_norm_bias", {6}, [](const Tensor& x, Rng& aux) {
    return layer_norm(rand_const(aux, {3, 6}), rand_const(aux, {6}, 0.5, 1.5), x, 1e-5);
  }));
  cases.push_back(op_case("gelu", {4, 5}, [](const Tensor& x, Rng&) { return gelu(x); }, -2.0, 2.0));
  cases.push_back(op_case("exp", {4, 5}, [](const Tensor& x, Rng&) { return exp(x); }));
  cases.push_back(op_case("log", {4, 5}, [](const Tensor& x, Rng&) { return log(x); }, 0.4, 2.0));
  cases.push_back(op_case("softplus", {4, 5}, [](const Tensor& x, Rng&) { return softplus(x); }, -3.0, 3.0));
  cases.push_back(op_case("add_big", {3, 4, 2}, [](const Tensor& x, Rng& aux) {
    return add(x, rand_const(aux, {4, 2}));
  }));
  cases.push_back(op_case("add_small_bcast", {4, 2}, [](const Tensor& x, Rng& aux) {
    return add(rand_const(aux, {3, 4, 2}), x);
  }));
  cases.push_back(op_case("sub_small_bcast", {1, 4, 1}, [](const Tensor& x, Rng& aux) {
    return sub(rand_const(aux, {3, 4, 2}), x);
  }));
  cases.push_back(op_case("mul_big", {3, 4, 2}, [](const Tensor& x, Rng& aux) {
    return mul(x, rand_const(aux, {2}));
  }));
  cases.push_back(op_case("mul_small_bcast", {3, 1, 2}, [](const Tensor& x, Rng& aux) {
    return mul(rand_const(aux, {3, 4, 2}), x);
  }));
  cases.push_back(op_case("scale_shift", {3, 4}, [](const Tensor& x, Rng&) {
    return add_scalar(scale(neg(x), 1.7), 0.3);
  }));
  cases.push_back(op_case("sum_all", {3, 4}, [](const Tensor& x, Rng&) { return sum(x); }));
  cases.push_back(op_case("mean_all", {3, 4}, [](const Tensor& x, Rng&) { return mean(x); }));
  cases.push_back(op_case("sum_axis", {3, 4, 2}, [](const Tensor& x, Rng&) { return sum(x, 1); }));
  cases.push_back(op_case("mean_axis", {3, 4, 2}, [](const Tensor& x, Rng&) { return mean(x, -1); }));
  cases.push_back(op_case("concat", {3, 2}, [](const Tensor& x, Rng& aux) {
    return concat({x, rand_const(aux, {3, 4}), x}, 1);
  }));
  cases.push_back(op_case("slice", {3, 6}, [](const Tensor& x, Rng&) { return slice(x, 1, 2, 3); }));
  cases.push_back(op_case("reshape_transpose", {3, 4, 2}, [](const Tensor& x, Rng&) {
    return reshape(transpose(x, {2, 0, 1}), {6, 4});
  }));
  cases.push_back(op_case("expand", {1, 4, 1}, [](const Tensor& x, Rng&) {
    return expand(x, {3, 4, 2});
  }));
  cases.push_back(op_case("l2_normalize", {4, 6}, [](const Tensor& x, Rng&) {
    return l2_normalize(x);
  }, 0.2, 1.0));
  cases.push_back(op_case("bilinear_up", {3, 3, 2}, [](const Tensor& x, Rng&) {
    return bilinear_resize_hw(x, 5, 5);
  }));
  cases.push_back(op_case("bilinear_down", {5, 5, 2}, [](const Tensor& x, Rng&) {
    return bilinear_resize_hw(x, 3, 3);
  }));
  cases.push_back(op_case("patchify", {2, 2, 4, 4}, [](const Tensor& x, Rng&) {
    return patchify(x, 2);
  }));

  cases.push_back(GradCheckCase{"composite_input", 1e-4, [](std::uint64_t seed) {
    const ViTConfig cfg = tiny_vit_config();
    Rng rng = Rng::from_seed(seed).split(23);
    const ParameterSet params = init_params(cfg, rng.next_u64());
    Rng target = rng.split(3);
    Tensor images = rand_const(rng, {1, cfg.in_channels, cfg.image_size, cfg.image_size});
    return grad_check([&](const Tensor& x) { return composite_loss(cfg, params, x, target); }, images, 1e-5);
  }});
  cases.push_back(GradCheckCase{"composite_param", 1e-4, [](std::uint64_t seed) {
    const ViTConfig cfg = tiny_vit_config();
    Rng rng = Rng::from_seed(seed).split(29);
    ParameterSet params = init_params(cfg, rng.next_u64());
    Rng target = rng.split(3);
    const Tensor images = rand_const(rng, {1, cfg.in_channels, cfg.image_size, cfg.image_size});
    const std::string path = "blocks.0.attn.qkv.weight";
    const Tensor w0 = Tensor::from_data(params.at(path).shape(), params.at(path).values());
    return grad_check([&](const Tensor& w) {
      ParameterSet local = params;
      local[path] = w;
      return composite_loss(cfg, local, images, target);
    }, w0, 1e-5);
  }});
  cases.push_back(GradCheckCase{"composite_head_direction", 1e-4, [](std::uint64_t seed) {
    const ViTConfig cfg = tiny_vit_config();
    Rng rng = Rng::from_seed(seed).split(31);
    ParameterSet params = init_params(cfg, rng.next_u64());
    Rng target = rng.split(3);
    const Tensor images = rand_const(rng, {1, cfg.in_channels, cfg.image_size, cfg.image_size});
    const std::string path = "head.wn.direction";
    const Tensor w0 = Tensor::from_data(params.at(path).shape(), params.at(path).values());
    return grad_check([&](const Tensor& w) {
      ParameterSet local = params;
      local[path] = w;
      return composite_loss(cfg, local, images, target);
    }, w0, 1e-5);
  }});
  return cases;
}

}  // namespace

const std::vector<GradCheckCase>& standard_grad_checks() {
  static const std::vector<GradCheckCase> cases = build_cases();
  return cases;
}

std::vector<GradCheckResult> run_standard_grad_checks(int num_seeds, double tolerance_override) {
  if (num_seeds < 1) throw ValueError("run_standard_grad_checks: num_seeds must be >= 1");
  std::vector<GradCheckResult> results;
  for (const GradCheckCase& c : standard_grad_checks()) {
    const double tol = tolerance_override > 0.0 ? tolerance_override : c.tolerance;
    for (int s = 0; s < num_seeds; ++s) {
      const double err = c.run(static_cast<std::uint64_t>(s));
      results.push_back({c.name, static_cast<std::uint64_t>(s), err, tol, err < tol});
    }
  }
  return results;
}

}  // namespace dinomm
