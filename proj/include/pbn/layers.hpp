#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "pbn/fixed_point.hpp"
#include "pbn/linop.hpp"

namespace pbn {

/// One term of a quadratic data-fidelity penalty
///   D(x) = sum_i w_i * 0.5 * ||A_i x - y_i||^2.
/// When `design_learnable` is set, A_i must carry a weighted-sum head whose
/// coefficients act as learnable design weights.
struct FidelityTerm {
  double weight = 1.0;
  bool weight_learnable = false;
  LinOp op;
  bool design_learnable = false;
  Tensor measurement;
};

/// Data-consistency step z = x - alpha * grad D(x).
struct GradientLayer {
  double alpha = 0.0;
  bool alpha_learnable = false;
  std::vector<FidelityTerm> terms;
  /// Power-iteration estimate of the largest eigenvalue of
  /// sum_i w_i A_i^H A_i; alpha * curvature_bound < 1 certifies inversion.
  double curvature_bound = 0.0;
};

/// Proximal step for the quadratic penalty (lambda/2) ||v||^2: x = z / (1 + lambda).
struct QuadraticProxLayer {
  double lambda = 0.0;
  bool lambda_learnable = false;
};

/// Proximal step for (lambda/2) ||C v||^2. The forward map solves the
/// implicit equation (I + lambda C^H C) v = z by fixed-point iteration; the
/// inverse is the explicit map z = x + lambda C^H C x.
struct SmoothProxLayer {
  double lambda = 0.0;
  bool lambda_learnable = false;
  LinOp filter;
  double filter_norm_sq = 0.0;  // estimate of the largest eigenvalue of C^H C
  FixedPointConfig inner;
};

/// Multichannel circular convolution with real taps, the building block of
/// the invertible residual layer. Data layout {channels, spatial...}.
struct ConvBank {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Shape spatial;
  Tensor kernels;  // shape {out_channels, in_channels, taps...}, real-valued

  Shape in_shape() const;
  Shape out_shape() const;
  Tensor apply(const Tensor& u) const;
  Tensor apply_adjoint(const Tensor& v) const;
  /// dL/d(kernels) for L = <v, apply(u)> with both arguments fixed.
  Tensor kernel_gradient(const Tensor& u, const Tensor& v) const;
  double norm_sq_estimate(int iters, std::uint64_t seed) const;
};

/// Residual map x -> x + g(x) with g(x) = W2 softplus(W1 x) acting on
/// real/imaginary channel-stacked data. Invertible whenever Lip(g) < 1,
/// certified by the product of the banks' spectral norms.
struct InvertibleResidualLayer {
  ConvBank w1;  // 2 -> hidden channels
  ConvBank w2;  // hidden -> 2 channels
  bool kernels_learnable = false;
  double lip_budget = 0.9;
  double certified_bound = 0.0;
  FixedPointConfig inner;
};

using LayerOp =
    std::variant<GradientLayer, QuadraticProxLayer, SmoothProxLayer, InvertibleResidualLayer>;

struct Layer {
  LayerOp op;
  /// Layers sharing a group also share parameters; gradients for the group
  /// are accumulated over its layers. Assigned by make_network when < 0.
  int param_group = -1;
};

/// Parameter gradients produced by one layer's vector-Jacobian product.
struct LayerGrads {
  std::optional<double> alpha;
  std::vector<double> term_weights;               // aligned with terms; empty if none learnable
  std::vector<std::vector<double>> design;        // per term, per design coefficient
  std::optional<double> lambda;
  std::optional<Tensor> w1;                       // kernel gradients, real-valued
  std::optional<Tensor> w2;
  std::vector<Tensor> measurement_cotangents;     // per term dL/dy_i, on request
};

struct VjpOptions {
  const Tensor* output_hint = nullptr;  // layer output at x_in when the caller holds it
  bool want_param_grads = true;
  bool want_measurement_cotangents = false;
};

struct VjpResult {
  Tensor input_grad;
  LayerGrads grads;
};

/// The layer's image shape, or nullptr for shape-agnostic kinds
/// (the quadratic prox acts elementwise on anything).
const Shape* layer_shape(const Layer& layer);
const char* layer_kind_name(const Layer& layer);

Tensor layer_forward(const Layer& layer, const Tensor& x, Counters* counters = nullptr);

/// Recovers the layer input from its output. Gradient and residual kinds run
/// the fixed-point iteration under `inv`; prox kinds invert in closed form
/// and ignore `inv`. Refuses up front when the contraction certificate fails.
Tensor layer_inverse(const Layer& layer, const Tensor& output, const FixedPointConfig& inv,
                     Counters* counters = nullptr);

VjpResult layer_vjp(const Layer& layer, const Tensor& x_in, const Tensor& q_out,
                    const VjpOptions& opts = {}, Counters* counters = nullptr);

/// grad D(x) = sum_i w_i A_i^H (A_i x - y_i)
Tensor fidelity_gradient(const GradientLayer& layer, const Tensor& x,
                         Counters* counters = nullptr);

/// Estimates the largest eigenvalue of sum_i w_i A_i^H A_i.
double gradient_curvature_estimate(const GradientLayer& layer, int iters,
                                   std::uint64_t seed);

GradientLayer make_gradient_layer(double alpha, bool alpha_learnable,
                                  std::vector<FidelityTerm> terms,
                                  int sigma_iters = 128,
                                  std::uint64_t sigma_seed = 0x51u);

SmoothProxLayer make_smooth_prox_layer(double lambda, bool lambda_learnable, LinOp filter,
                                       FixedPointConfig inner, int sigma_iters = 128,
                                       std::uint64_t sigma_seed = 0x52u);

ConvBank make_conv_bank(std::size_t in_channels, std::size_t out_channels, Shape spatial,
                        Shape taps, Rng& rng, double init_scale);

/// Rescales both banks by sqrt(min(1, budget / (s1 * s2))) so the certified
/// product bound drops to at most `lip_budget`. Idempotent once within budget.
InvertibleResidualLayer constrain_lipschitz(InvertibleResidualLayer layer,
                                            std::uint64_t seed, int iters = 128);

/// Certified product bound sqrt(est1 * est2) of the two banks.
double residual_lipschitz_estimate(const InvertibleResidualLayer& layer, int iters,
                                   std::uint64_t seed);

/// Interleaves a complex image as two real channels {2, shape...}.
Tensor stack_reim(const Tensor& x);
Tensor unstack_reim(const Tensor& s);

double softplus(double t);
double softplus_prime(double t);

}  // namespace pbn
