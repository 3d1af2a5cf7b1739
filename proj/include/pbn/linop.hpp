#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pbn/rng.hpp"
#include "pbn/tensor.hpp"

namespace pbn {

/// Closed family of linear forward models with exact adjoints.
///
/// Composition order follows mathematical convention: compose({A, B})
/// applies B first, so its value is A(B(x)).
class LinOp {
 public:
  enum class Kind {
    Identity,
    Diagonal,
    Dft,
    Mask,
    CircularConv,
    CoilStack,
    Compose,
    WeightedSum,
  };

  LinOp() = default;

  static LinOp identity(Shape s);
  static LinOp diagonal(Tensor weights);
  /// Unitary discrete Fourier transform over the given axes (all by default),
  /// normalized by 1/sqrt(n) per axis.
  static LinOp dft(Shape s);
  static LinOp dft(Shape s, std::vector<std::size_t> axes);
  /// Gathers the listed flat indices; adjoint zero-fills.
  static LinOp mask(std::vector<std::size_t> keep, Shape in);
  /// Circular convolution with a small tap kernel anchored at index 0.
  static LinOp circular_conv(Tensor kernel, Shape s);
  /// x -> stack of s_c .* x over coils; adjoint sums conj(s_c) .* y_c.
  static LinOp coil_stack(std::vector<Tensor> sensitivities);
  static LinOp compose(std::vector<LinOp> factors);
  static LinOp weighted_sum(std::vector<double> coeffs, std::vector<LinOp> ops);

  Kind kind() const { return kind_; }
  const Shape& in_shape() const { return in_; }
  const Shape& out_shape() const { return out_; }

  Tensor forward(const Tensor& x) const;
  Tensor adjoint(const Tensor& y) const;

  /// True when the operator is a weighted sum, or a composition headed by
  /// one, so its leading coefficients can act as learnable design weights.
  bool has_weighted_sum_head() const;
  std::size_t weighted_sum_size() const;
  const std::vector<double>& weighted_sum_coeffs() const;
  /// The coefficient-free slice d/dw_i of a weighted-sum head.
  LinOp weighted_sum_component(std::size_t i) const;
  LinOp with_weighted_sum_coeffs(std::vector<double> coeffs) const;

 private:
  Kind kind_ = Kind::Identity;
  Shape in_, out_;
  Tensor weights_;                  // diagonal weights or conv kernel
  std::vector<std::size_t> indices_;  // mask
  std::vector<std::size_t> axes_;     // dft
  std::vector<Tensor> maps_;          // coil sensitivities
  std::vector<LinOp> children_;       // compose / weighted-sum operands
  std::vector<double> coeffs_;        // weighted-sum coefficients
};

struct SpectralEstimate {
  double value = 0.0;
  bool degenerate = false;  // operator annihilated the probe vector
};

/// Power-iteration estimate of the largest eigenvalue of A^H A. The returned
/// sequence is nondecreasing in `iters` for a fixed seed (running maximum of
/// Rayleigh quotients).
SpectralEstimate estimate_sigma_max(const LinOp& op, int iters, std::uint64_t seed);

/// Generic power iteration on a self-adjoint positive map given by `normal_apply`.
double power_iteration_max_eig(const std::function<Tensor(const Tensor&)>& normal_apply,
                               const Shape& shape, int iters, std::uint64_t seed,
                               bool* degenerate = nullptr);

/// Largest relative defect |<Au,v> - <u,A^H v>| / (||Au|| ||v||) over seeded
/// random probes. Used as the build-time self check.
double adjoint_mismatch(const LinOp& op, int trials, std::uint64_t seed);

/// Runs the adjoint self check and throws a validation error on failure.
void validate_operator(const LinOp& op, std::uint64_t seed = 0x1234, int trials = 8,
                       double tol = 1e-10);

/// Complex tensor with each component uniform in [-1, 1).
Tensor random_tensor(const Shape& shape, Rng& rng);

}  // namespace pbn
