#include <doctest.h>

#include <cmath>

#include "pbn/errors.hpp"
#include "pbn/network.hpp"
#include "pbn/params.hpp"
#include "test_helpers.hpp"

using namespace pbn;
using namespace pbn::testing;

namespace {

Layer scalar_gradient_layer(double alpha, bool learnable = true) {
  FidelityTerm term;
  term.weight = 1.0;
  term.op = LinOp::identity({1});
  term.measurement = Tensor({1});
  GradientLayer g = make_gradient_layer(alpha, learnable, {std::move(term)});
  return Layer{std::move(g), -1};
}

Layer diag_gradient_layer(const Shape& img, double contraction, std::uint64_t seed,
                          bool alpha_learnable, bool weight_learnable) {
  Rng rng(seed);
  Tensor w(img);
  for (auto& v : w.values()) v = cdouble(rng.uniform(0.4, 1.0), 0.0);
  FidelityTerm term;
  term.weight = 1.0;
  term.weight_learnable = weight_learnable;
  term.op = LinOp::diagonal(std::move(w));
  term.measurement = random_tensor(img, rng);
  GradientLayer g = make_gradient_layer(0.0, alpha_learnable, {std::move(term)});
  g.alpha = contraction / g.curvature_bound;
  return Layer{std::move(g), -1};
}

Layer design_gradient_layer(const Shape& img, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LinOp> bands;
  const std::size_t S = 4;
  const std::size_t rows = img[0] / S;
  for (std::size_t s = 0; s < S; ++s) {
    Tensor ind(img);
    for (std::size_t i = s * rows; i < (s + 1) * rows; ++i) {
      for (std::size_t j = 0; j < img[1]; ++j) ind[i * img[1] + j] = cdouble(1, 0);
    }
    bands.push_back(LinOp::diagonal(std::move(ind)));
  }
  std::vector<FidelityTerm> terms;
  for (std::size_t l = 0; l < 2; ++l) {
    std::vector<double> coeffs;
    for (std::size_t s = 0; s < S; ++s) coeffs.push_back(rng.uniform(0.2, 1.0));
    FidelityTerm term;
    term.weight = 1.0;
    term.design_learnable = true;
    term.op = LinOp::compose({LinOp::weighted_sum(coeffs, bands), LinOp::dft(img)});
    term.measurement = random_tensor(img, rng);
    terms.push_back(std::move(term));
  }
  GradientLayer g = make_gradient_layer(0.0, true, std::move(terms));
  g.alpha = 0.5 / g.curvature_bound;
  return Layer{std::move(g), -1};
}

Layer smooth_prox_layer(const Shape& img, double contraction, std::size_t iters,
                        bool learnable) {
  Tensor taps({2, 2});
  taps[0] = cdouble(2, 0);
  taps[1] = cdouble(-1, 0);
  taps[2] = cdouble(-1, 0);
  SmoothProxLayer s = make_smooth_prox_layer(0.0, learnable,
                                             LinOp::circular_conv(taps, img),
                                             {iters, 0.0, false});
  s.lambda = contraction / s.filter_norm_sq;
  return Layer{std::move(s), -1};
}

Layer residual_layer(const Shape& img, double budget, std::size_t iters,
                     std::uint64_t seed, bool learnable = true) {
  Rng rng(seed);
  InvertibleResidualLayer r;
  r.w1 = make_conv_bank(2, 3, img, {3, 3}, rng, 0.25);
  r.w2 = make_conv_bank(3, 2, img, {3, 3}, rng, 0.25);
  r.kernels_learnable = learnable;
  r.lip_budget = budget;
  r.inner = {iters, 0.0, false};
  return Layer{constrain_lipschitz(std::move(r), seed ^ 0xf00du), -1};
}

/// Finite-difference check of every learnable parameter and sampled input
/// components for one layer against the analytic vector-Jacobian product.
void check_layer_vjp(const Layer& layer, const Shape& img, std::uint64_t seed,
                     double tol) {
  Rng rng(seed);
  const Tensor x = random_tensor(img, rng);
  const Tensor w = random_tensor(img, rng);
  Network net = make_network({layer});
  const ParamLayout layout = build_layout(net);
  const auto res = layer_vjp(net.layers[0], x, w);
  GradientReport rep;
  rep.layer_grads = {res.grads};
  rep.input_grad = res.input_grad;
  const auto analytic = flatten_grads(net, layout, rep);
  const auto base = collect_params(net, layout);
  auto loss_at = [&](const std::vector<double>& p) {
    const Network net_p = with_params(net, layout, p, /*refresh=*/false);
    return real_inner(w, layer_forward(net_p.layers[0], x));
  };
  const double h = 1e-6;
  double scale = max_abs_vec(analytic);
  for (std::size_t i = 0; i < layout.total; ++i) {
    auto p = base;
    p[i] = base[i] + h;
    const double lp = loss_at(p);
    p[i] = base[i] - h;
    const double lm = loss_at(p);
    const double fd = (lp - lm) / (2.0 * h);
    CHECK(grad_rel_err(fd, analytic[i], scale) <= tol);
  }
  // input cotangent against finite differences on sampled components
  const double qscale = max_abs(res.input_grad);
  for (std::size_t j = 0; j < std::min<std::size_t>(6, x.numel()); ++j) {
    const std::size_t idx = (j * 37) % x.numel();
    Tensor xp = x, xm = x;
    xp[idx] += cdouble(h, 0);
    xm[idx] -= cdouble(h, 0);
    const double fd_re = (real_inner(w, layer_forward(layer, xp)) -
                          real_inner(w, layer_forward(layer, xm))) /
                         (2.0 * h);
    CHECK(grad_rel_err(fd_re, res.input_grad[idx].real(), qscale) <= tol);
    xp = x;
    xm = x;
    xp[idx] += cdouble(0, h);
    xm[idx] -= cdouble(0, h);
    const double fd_im = (real_inner(w, layer_forward(layer, xp)) -
                          real_inner(w, layer_forward(layer, xm))) /
                         (2.0 * h);
    CHECK(grad_rel_err(fd_im, res.input_grad[idx].imag(), qscale) <= tol);
  }
}

}  // namespace

TEST_SUITE("layers") {

TEST_CASE("gradient layer forward, scalar example") {
  const Layer l = scalar_gradient_layer(0.5);
  const Tensor out = layer_forward(l, Tensor::scalar(cdouble(2, 0)));
  CHECK(out[0] == cdouble(1, 0));
}

TEST_CASE("gradient layer inverse follows the geometric recursion") {
  const Layer l = scalar_gradient_layer(0.5);
  const Tensor x = layer_inverse(l, Tensor::scalar(cdouble(1, 0)), {30, 0.0, false});
  CHECK(std::abs(x[0].real() - (2.0 - std::pow(0.5, 30))) < 1e-12);
}

TEST_CASE("gradient layer inverse refuses without a contraction certificate") {
  const Layer l = scalar_gradient_layer(1.2);
  try {
    layer_inverse(l, Tensor::scalar(cdouble(1, 0)), {10, 0.0, false});
    FAIL("expected refusal");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Certificate);
  }
}

TEST_CASE("gradient layer vjp, scalar examples") {
  const Layer l = scalar_gradient_layer(0.5);
  const auto res = layer_vjp(l, Tensor::scalar(cdouble(2, 0)), Tensor::scalar(cdouble(1, 0)));
  CHECK(res.input_grad[0] == cdouble(0.5, 0));   // (1 - alpha) q
  REQUIRE(res.grads.alpha.has_value());
  CHECK(*res.grads.alpha == doctest::Approx(-2.0));  // -<grad D(x), q>
}

TEST_CASE("gradient layer forward is affine") {
  const Layer l = diag_gradient_layer({8, 8}, 0.7, 21, false, false);
  Rng rng(5);
  const Tensor a = random_tensor({8, 8}, rng);
  const Tensor b = random_tensor({8, 8}, rng);
  const Tensor zero = Tensor({8, 8});
  const Tensor lhs = layer_forward(l, a) + layer_forward(l, b) - layer_forward(l, zero);
  const Tensor rhs = layer_forward(l, a + b);
  CHECK(rel_err(lhs, rhs) < 1e-13);
}

TEST_CASE("quadratic prox examples and exact round trip") {
  Layer l{QuadraticProxLayer{1.0, true}, -1};
  CHECK(layer_forward(l, Tensor::scalar(cdouble(4, 0)))[0] == cdouble(2, 0));
  CHECK(layer_inverse(l, Tensor::scalar(cdouble(2, 0)), {1, 0.0, false})[0] ==
        cdouble(4, 0));
  Rng rng(31);
  const Tensor x = random_tensor({16, 16}, rng);
  Layer l2{QuadraticProxLayer{0.37, false}, -1};
  const Tensor rt = layer_inverse(l2, layer_forward(l2, x), {1, 0.0, false});
  CHECK(rel_err(rt, x) <= 1e-14);
}

TEST_CASE("quadratic prox vjp matches the closed form") {
  Layer l{QuadraticProxLayer{1.0, true}, -1};
  const auto res =
      layer_vjp(l, Tensor::scalar(cdouble(4, 0)), Tensor::scalar(cdouble(1, 0)));
  CHECK(res.input_grad[0] == cdouble(0.5, 0));
  // x_out = 2, grad = -<x_out/(1+lambda), q> = -1
  CHECK(*res.grads.lambda == doctest::Approx(-1.0));
}

TEST_CASE("smooth prox with the prior off is the identity") {
  const Layer l = smooth_prox_layer({8, 8}, 0.0, 10, false);
  Rng rng(3);
  const Tensor z = random_tensor({8, 8}, rng);
  CHECK(rel_err(layer_forward(l, z), z) == 0.0);
}

TEST_CASE("smooth prox round trip meets the geometric budget") {
  const Layer l = smooth_prox_layer({8, 8}, 0.5, 40, false);
  Rng rng(12);
  const Tensor z = random_tensor({8, 8}, rng);
  const Tensor x = layer_forward(l, z);
  const Tensor back = layer_inverse(l, x, {1, 0.0, false});
  CHECK(rel_err(back, z) <= std::pow(0.5, 40) * 10.0);
}

TEST_CASE("smooth prox refuses a non-contractive forward solve") {
  Tensor taps({2, 2});
  taps[0] = cdouble(2, 0);
  taps[1] = cdouble(-1, 0);
  CHECK_THROWS_AS(make_smooth_prox_layer(10.0, false,
                                         LinOp::circular_conv(taps, {8, 8}),
                                         {10, 0.0, false}),
                  Error);
}

TEST_CASE("residual layer with a zero second bank is the identity") {
  Layer l = residual_layer({8, 8}, 0.9, 10, 77);
  auto& r = std::get<InvertibleResidualLayer>(l.op);
  r.w2.kernels.scale(0.0);
  r.certified_bound = 0.0;
  Rng rng(8);
  const Tensor x = random_tensor({8, 8}, rng);
  CHECK(rel_err(layer_forward(l, x), x) == 0.0);
}

TEST_CASE("channel stacking is lossless") {
  Rng rng(9);
  const Tensor x = random_tensor({4, 5}, rng);
  const Tensor s = stack_reim(x);
  CHECK(s.shape() == Shape{2, 4, 5});
  const Tensor back = unstack_reim(s);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back[i] == x[i]);
}

TEST_CASE("conv bank adjoint identity and kernel gradient oracle") {
  Rng rng(41);
  ConvBank bank = make_conv_bank(2, 3, {6, 6}, {2, 2}, rng, 0.5);
  const Tensor u = random_tensor(bank.in_shape(), rng);
  const Tensor v = random_tensor(bank.out_shape(), rng);
  const cdouble lhs = inner(v, bank.apply(u));
  const cdouble rhs = inner(bank.apply_adjoint(v), u);
  CHECK(std::abs(lhs - rhs) <= 1e-12 * std::abs(lhs));

  // d/dk of Re<v, W u> against central differences, every tap
  const Tensor grad = bank.kernel_gradient(u, v);
  const double h = 1e-6;
  double scale = max_abs(grad);
  for (std::size_t i = 0; i < bank.kernels.numel(); ++i) {
    ConvBank bp = bank, bm = bank;
    bp.kernels[i] += cdouble(h, 0);
    bm.kernels[i] -= cdouble(h, 0);
    const double fd = (real_inner(v, bp.apply(u)) - real_inner(v, bm.apply(u))) / (2 * h);
    CHECK(grad_rel_err(fd, grad[i].real(), scale) <= 1e-7);
  }
}

TEST_CASE("round trips meet 1e-8 for every kind at T=50, contraction 0.5") {
  const Shape img{16, 16};
  Rng rng(2025);
  const FixedPointConfig inv{50, 0.0, false};
  const Tensor x = random_tensor(img, rng);
  const std::vector<Layer> layers = {
      diag_gradient_layer(img, 0.5, 101, false, false),
      Layer{QuadraticProxLayer{0.8, false}, -1},
      smooth_prox_layer(img, 0.5, 50, false),
      residual_layer(img, 0.5, 50, 202),
  };
  for (const auto& layer : layers) {
    const Tensor rt = layer_inverse(layer, layer_forward(layer, x), inv);
    CHECK(rel_err(rt, x) <= 1e-8);
  }
}

TEST_CASE("vjp agrees with finite differences for every kind and parameter") {
  const Shape img{8, 8};
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    check_layer_vjp(diag_gradient_layer(img, 0.6, seed, true, true), img, seed, 1e-5);
    check_layer_vjp(design_gradient_layer(img, seed), img, seed + 50, 1e-5);
    check_layer_vjp(Layer{QuadraticProxLayer{0.7, true}, -1}, img, seed + 100, 1e-5);
    check_layer_vjp(smooth_prox_layer(img, 0.5, 60, true), img, seed + 150, 1e-5);
    check_layer_vjp(residual_layer(img, 0.8, 40, seed + 200), img, seed + 250, 1e-5);
  }
}

TEST_CASE("measurement cotangents match finite differences over y") {
  const Shape img{8, 8};
  const Layer l = diag_gradient_layer(img, 0.6, 303, false, false);
  Rng rng(304);
  const Tensor x = random_tensor(img, rng);
  const Tensor w = random_tensor(img, rng);
  VjpOptions opts;
  opts.want_measurement_cotangents = true;
  const auto res = layer_vjp(l, x, w, opts);
  REQUIRE(res.grads.measurement_cotangents.size() == 1);
  const Tensor& cot = res.grads.measurement_cotangents[0];
  const double h = 1e-6;
  const double scale = max_abs(cot);
  for (std::size_t j : {std::size_t{0}, std::size_t{17}, std::size_t{40}}) {
    for (int part = 0; part < 2; ++part) {
      Layer lp = l, lm = l;
      const cdouble dh = part == 0 ? cdouble(h, 0) : cdouble(0, h);
      std::get<GradientLayer>(lp.op).terms[0].measurement[j] += dh;
      std::get<GradientLayer>(lm.op).terms[0].measurement[j] -= dh;
      const double fd =
          (real_inner(w, layer_forward(lp, x)) - real_inner(w, layer_forward(lm, x))) /
          (2 * h);
      const double analytic = part == 0 ? cot[j].real() : cot[j].imag();
      CHECK(grad_rel_err(fd, analytic, scale) <= 1e-6);
    }
  }
}

TEST_CASE("constrain_lipschitz product arithmetic and idempotence") {
  Rng rng(55);
  InvertibleResidualLayer r;
  r.w1 = make_conv_bank(2, 3, {8, 8}, {3, 3}, rng, 0.4);
  r.w2 = make_conv_bank(3, 2, {8, 8}, {3, 3}, rng, 0.4);
  r.lip_budget = 0.9;
  r.inner = {10, 0.0, false};
  const double before = residual_lipschitz_estimate(r, 128, 1);
  const InvertibleResidualLayer c1 = constrain_lipschitz(r, 1);
  CHECK(c1.certified_bound <= 0.9 + 1e-12);
  if (before > 0.9) {
    const double expected_scale = std::sqrt(0.9 / before);
    CHECK(c1.w1.kernels[0].real() ==
          doctest::Approx(r.w1.kernels[0].real() * expected_scale));
  }
  const InvertibleResidualLayer c2 = constrain_lipschitz(c1, 1);
  for (std::size_t i = 0; i < c1.w1.kernels.numel(); ++i) {
    CHECK(c2.w1.kernels[i] == c1.w1.kernels[i]);
  }
}

TEST_CASE("constrained residual passes the sampled Lipschitz oracle") {
  const Shape img{8, 8};
  Layer l = residual_layer(img, 0.9, 10, 909);
  const auto& r = std::get<InvertibleResidualLayer>(l.op);
  Rng rng(910);
  auto g_of = [&](const Tensor& x) {
    // displacement g(x) = forward(x) - x
    return layer_forward(l, x) - x;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const Tensor u = random_tensor(img, rng);
    const Tensor v = random_tensor(img, rng);
    const double du = norm(u - v);
    if (du < 1e-9) continue;
    const double ratio = norm(g_of(u) - g_of(v)) / du;
    CHECK(ratio <= r.lip_budget);
  }
}

TEST_CASE("residual inverse refuses an uncertified layer") {
  Layer l = residual_layer({8, 8}, 0.9, 10, 42);
  auto& r = std::get<InvertibleResidualLayer>(l.op);
  r.certified_bound = 1.3;
  Rng rng(43);
  CHECK_THROWS_AS(layer_inverse(l, random_tensor({8, 8}, rng), {10, 0.0, false}), Error);
}

}  // TEST_SUITE
