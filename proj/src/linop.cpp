#include "pbn/linop.hpp"

#include <algorithm>
#include <cmath>

#include "pbn/errors.hpp"

namespace pbn {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place radix-2 FFT on a contiguous line; sign -1 forward, +1 inverse.
void fft_pow2(std::vector<cdouble>& a, int sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * kTwoPi / static_cast<double>(len);
    const cdouble wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cdouble w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const cdouble u = a[i + j];
        const cdouble v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
}

// Direct transform for non power-of-two lengths. Angles are reduced mod n so
// precision does not degrade with j*k.
void dft_direct(std::vector<cdouble>& a, int sign) {
  const std::size_t n = a.size();
  std::vector<cdouble> out(n, cdouble(0.0, 0.0));
  for (std::size_t k = 0; k < n; ++k) {
    cdouble acc(0.0, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t m = (j * k) % n;
      const double ang = sign * kTwoPi * static_cast<double>(m) / static_cast<double>(n);
      acc += a[j] * cdouble(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  a = std::move(out);
}

void transform_axis(Tensor& t, std::size_t axis, int sign) {
  const Shape& s = t.shape();
  const auto strides = shape_strides(s);
  const std::size_t n = s[axis];
  const std::size_t stride = strides[axis];
  const std::size_t total = t.numel();
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<cdouble> line(n);
  // Iterate over every line along `axis`.
  for (std::size_t base = 0; base < total; ++base) {
    const std::size_t along = (base / stride) % n;
    if (along != 0) continue;
    for (std::size_t j = 0; j < n; ++j) line[j] = t[base + j * stride];
    if (is_pow2(n)) {
      fft_pow2(line, sign);
    } else {
      dft_direct(line, sign);
    }
    for (std::size_t j = 0; j < n; ++j) t[base + j * stride] = line[j] * scale;
  }
}

Shape conv_in_shape_check(const Tensor& kernel, const Shape& s) {
  if (kernel.shape().size() != s.size()) {
    raise(ErrorKind::Shape, "conv kernel rank " + shape_str(kernel.shape()) +
                                " vs data " + shape_str(s));
  }
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (kernel.shape()[d] > s[d]) {
      raise(ErrorKind::Shape, "conv kernel " + shape_str(kernel.shape()) +
                                  " exceeds data " + shape_str(s));
    }
  }
  return s;
}

}  // namespace

LinOp LinOp::identity(Shape s) {
  LinOp op;
  op.kind_ = Kind::Identity;
  op.in_ = s;
  op.out_ = std::move(s);
  return op;
}

LinOp LinOp::diagonal(Tensor weights) {
  LinOp op;
  op.kind_ = Kind::Diagonal;
  op.in_ = weights.shape();
  op.out_ = weights.shape();
  op.weights_ = std::move(weights);
  return op;
}

LinOp LinOp::dft(Shape s) {
  std::vector<std::size_t> axes(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) axes[d] = d;
  return dft(std::move(s), std::move(axes));
}

LinOp LinOp::dft(Shape s, std::vector<std::size_t> axes) {
  LinOp op;
  op.kind_ = Kind::Dft;
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  for (std::size_t a : axes) {
    if (a >= s.size()) raise(ErrorKind::Shape, "dft axis out of range");
  }
  if (axes.empty()) raise(ErrorKind::Shape, "dft needs at least one axis");
  op.in_ = s;
  op.out_ = std::move(s);
  op.axes_ = std::move(axes);
  return op;
}

LinOp LinOp::mask(std::vector<std::size_t> keep, Shape in) {
  LinOp op;
  op.kind_ = Kind::Mask;
  const std::size_t n = shape_numel(in);
  if (keep.empty()) raise(ErrorKind::Shape, "mask keeps no indices");
  for (std::size_t i : keep) {
    if (i >= n) raise(ErrorKind::Shape, "mask index " + std::to_string(i) +
                                            " outside " + shape_str(in));
  }
  op.in_ = std::move(in);
  op.out_ = {keep.size()};
  op.indices_ = std::move(keep);
  return op;
}

LinOp LinOp::circular_conv(Tensor kernel, Shape s) {
  LinOp op;
  op.kind_ = Kind::CircularConv;
  op.in_ = conv_in_shape_check(kernel, s);
  op.out_ = op.in_;
  op.weights_ = std::move(kernel);
  return op;
}

LinOp LinOp::coil_stack(std::vector<Tensor> sensitivities) {
  if (sensitivities.empty()) raise(ErrorKind::Shape, "coil stack needs maps");
  LinOp op;
  op.kind_ = Kind::CoilStack;
  op.in_ = sensitivities.front().shape();
  for (const auto& m : sensitivities) {
    if (m.shape() != op.in_) raise(ErrorKind::Shape, "coil maps disagree in shape");
  }
  op.out_ = Shape{sensitivities.size()};
  op.out_.insert(op.out_.end(), op.in_.begin(), op.in_.end());
  op.maps_ = std::move(sensitivities);
  return op;
}

LinOp LinOp::compose(std::vector<LinOp> factors) {
  if (factors.empty()) raise(ErrorKind::Shape, "empty composition");
  for (std::size_t i = 0; i + 1 < factors.size(); ++i) {
    if (factors[i].in_shape() != factors[i + 1].out_shape()) {
      raise(ErrorKind::Shape,
            "composition chain break at factor " + std::to_string(i) + ": " +
                shape_str(factors[i].in_shape()) + " vs " +
                shape_str(factors[i + 1].out_shape()));
    }
  }
  LinOp op;
  op.kind_ = Kind::Compose;
  op.in_ = factors.back().in_shape();
  op.out_ = factors.front().out_shape();
  op.children_ = std::move(factors);
  return op;
}

LinOp LinOp::weighted_sum(std::vector<double> coeffs, std::vector<LinOp> ops) {
  if (ops.empty() || coeffs.size() != ops.size()) {
    raise(ErrorKind::Shape, "weighted sum needs matching coefficients and operands");
  }
  for (const auto& o : ops) {
    if (o.in_shape() != ops.front().in_shape() || o.out_shape() != ops.front().out_shape()) {
      raise(ErrorKind::Shape, "weighted sum operands disagree in shape");
    }
  }
  LinOp op;
  op.kind_ = Kind::WeightedSum;
  op.in_ = ops.front().in_shape();
  op.out_ = ops.front().out_shape();
  op.children_ = std::move(ops);
  op.coeffs_ = std::move(coeffs);
  return op;
}

Tensor LinOp::forward(const Tensor& x) const {
  if (x.shape() != in_) {
    raise(ErrorKind::Shape, "operator forward: input " + shape_str(x.shape()) +
                                ", expected " + shape_str(in_));
  }
  switch (kind_) {
    case Kind::Identity:
      return x;
    case Kind::Diagonal:
      return x.hadamard(weights_);
    case Kind::Dft: {
      Tensor t = x;
      for (std::size_t a : axes_) transform_axis(t, a, -1);
      return t;
    }
    case Kind::Mask: {
      Tensor out({indices_.size()});
      for (std::size_t t = 0; t < indices_.size(); ++t) out[t] = x[indices_[t]];
      return out;
    }
    case Kind::CircularConv: {
      Tensor out(in_);
      const auto dstr = shape_strides(in_);
      const auto kshape = weights_.shape();
      const auto kstr = shape_strides(kshape);
      const std::size_t rank = in_.size();
      std::vector<std::size_t> p(rank, 0), m(rank, 0);
      const std::size_t total = out.numel();
      const std::size_t ktotal = weights_.numel();
      for (std::size_t pf = 0; pf < total; ++pf) {
        // decompose pf
        {
          std::size_t r = pf;
          for (std::size_t d = 0; d < rank; ++d) {
            p[d] = r / dstr[d];
            r %= dstr[d];
          }
        }
        cdouble acc(0.0, 0.0);
        for (std::size_t kf = 0; kf < ktotal; ++kf) {
          std::size_t r = kf;
          std::size_t src = 0;
          for (std::size_t d = 0; d < rank; ++d) {
            m[d] = r / kstr[d];
            r %= kstr[d];
            const std::size_t q = (p[d] + in_[d] - m[d]) % in_[d];
            src += q * dstr[d];
          }
          acc += weights_[kf] * x[src];
        }
        out[pf] = acc;
      }
      return out;
    }
    case Kind::CoilStack: {
      Tensor out(out_);
      const std::size_t n = x.numel();
      for (std::size_t c = 0; c < maps_.size(); ++c) {
        for (std::size_t i = 0; i < n; ++i) out[c * n + i] = maps_[c][i] * x[i];
      }
      return out;
    }
    case Kind::Compose: {
      Tensor t = x;
      for (std::size_t i = children_.size(); i-- > 0;) t = children_[i].forward(t);
      return t;
    }
    case Kind::WeightedSum: {
      // Fixed left-to-right accumulation order over operands.
      Tensor acc = children_[0].forward(x).scaled(coeffs_[0]);
      for (std::size_t i = 1; i < children_.size(); ++i) {
        acc.axpy(coeffs_[i], children_[i].forward(x));
      }
      return acc;
    }
  }
  raise(ErrorKind::Validation, "unreachable operator kind");
}

Tensor LinOp::adjoint(const Tensor& y) const {
  if (y.shape() != out_) {
    raise(ErrorKind::Shape, "operator adjoint: input " + shape_str(y.shape()) +
                                ", expected " + shape_str(out_));
  }
  switch (kind_) {
    case Kind::Identity:
      return y;
    case Kind::Diagonal:
      return y.conj_hadamard(weights_);
    case Kind::Dft: {
      Tensor t = y;
      for (std::size_t a : axes_) transform_axis(t, a, +1);
      return t;
    }
    case Kind::Mask: {
      Tensor out(in_);
      for (std::size_t t = 0; t < indices_.size(); ++t) out[indices_[t]] += y[t];
      return out;
    }
    case Kind::CircularConv: {
      Tensor out(in_);
      const auto dstr = shape_strides(in_);
      const auto kshape = weights_.shape();
      const auto kstr = shape_strides(kshape);
      const std::size_t rank = in_.size();
      std::vector<std::size_t> p(rank, 0), m(rank, 0);
      const std::size_t total = out.numel();
      const std::size_t ktotal = weights_.numel();
      for (std::size_t pf = 0; pf < total; ++pf) {
        {
          std::size_t r = pf;
          for (std::size_t d = 0; d < rank; ++d) {
            p[d] = r / dstr[d];
            r %= dstr[d];
          }
        }
        cdouble acc(0.0, 0.0);
        for (std::size_t kf = 0; kf < ktotal; ++kf) {
          std::size_t r = kf;
          std::size_t src = 0;
          for (std::size_t d = 0; d < rank; ++d) {
            m[d] = r / kstr[d];
            r %= kstr[d];
            const std::size_t q = (p[d] + m[d]) % in_[d];
            src += q * dstr[d];
          }
          acc += std::conj(weights_[kf]) * y[src];
        }
        out[pf] = acc;
      }
      return out;
    }
    case Kind::CoilStack: {
      Tensor out(in_);
      const std::size_t n = out.numel();
      for (std::size_t c = 0; c < maps_.size(); ++c) {
        for (std::size_t i = 0; i < n; ++i) out[i] += std::conj(maps_[c][i]) * y[c * n + i];
      }
      return out;
    }
    case Kind::Compose: {
      Tensor t = y;
      for (const auto& f : children_) t = f.adjoint(t);
      return t;
    }
    case Kind::WeightedSum: {
      Tensor acc = children_[0].adjoint(y).scaled(coeffs_[0]);
      for (std::size_t i = 1; i < children_.size(); ++i) {
        acc.axpy(coeffs_[i], children_[i].adjoint(y));
      }
      return acc;
    }
  }
  raise(ErrorKind::Validation, "unreachable operator kind");
}

bool LinOp::has_weighted_sum_head() const {
  if (kind_ == Kind::WeightedSum) return true;
  return kind_ == Kind::Compose && !children_.empty() &&
         children_.front().kind_ == Kind::WeightedSum;
}

std::size_t LinOp::weighted_sum_size() const {
  return weighted_sum_coeffs().size();
}

const std::vector<double>& LinOp::weighted_sum_coeffs() const {
  if (kind_ == Kind::WeightedSum) return coeffs_;
  if (has_weighted_sum_head()) return children_.front().coeffs_;
  raise(ErrorKind::Validation, "operator has no weighted-sum head");
}

LinOp LinOp::weighted_sum_component(std::size_t i) const {
  if (kind_ == Kind::WeightedSum) {
    if (i >= children_.size()) raise(ErrorKind::Validation, "component index out of range");
    return children_[i];
  }
  if (has_weighted_sum_head()) {
    std::vector<LinOp> factors;
    factors.push_back(children_.front().weighted_sum_component(i));
    for (std::size_t k = 1; k < children_.size(); ++k) factors.push_back(children_[k]);
    return compose(std::move(factors));
  }
  raise(ErrorKind::Validation, "operator has no weighted-sum head");
}

LinOp LinOp::with_weighted_sum_coeffs(std::vector<double> coeffs) const {
  if (kind_ == Kind::WeightedSum) {
    if (coeffs.size() != coeffs_.size()) {
      raise(ErrorKind::Shape, "coefficient count changed");
    }
    LinOp op = *this;
    op.coeffs_ = std::move(coeffs);
    return op;
  }
  if (has_weighted_sum_head()) {
    LinOp op = *this;
    op.children_.front() = op.children_.front().with_weighted_sum_coeffs(std::move(coeffs));
    return op;
  }
  raise(ErrorKind::Validation, "operator has no weighted-sum head");
}

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.values()) v = cdouble(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  return t;
}

double power_iteration_max_eig(const std::function<Tensor(const Tensor&)>& normal_apply,
                               const Shape& shape, int iters, std::uint64_t seed,
                               bool* degenerate) {
  if (iters < 1) raise(ErrorKind::Validation, "power iteration needs iters >= 1");
  Rng rng(seed);
  Tensor v = random_tensor(shape, rng);
  double nv = norm(v);
  if (nv == 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  v.scale(1.0 / nv);
  double best = 0.0;
  if (degenerate) *degenerate = false;
  for (int t = 0; t < iters; ++t) {
    Tensor w = normal_apply(v);
    const double rayleigh = real_inner(v, w);
    best = std::max(best, rayleigh);
    const double nw = norm(w);
    if (nw == 0.0) {
      if (t == 0 && degenerate) *degenerate = true;
      return best;
    }
    w.scale(1.0 / nw);
    v = std::move(w);
  }
  return best;
}

SpectralEstimate estimate_sigma_max(const LinOp& op, int iters, std::uint64_t seed) {
  SpectralEstimate est;
  est.value = power_iteration_max_eig(
      [&op](const Tensor& v) { return op.adjoint(op.forward(v)); }, op.in_shape(),
      iters, seed, &est.degenerate);
  return est;
}

double adjoint_mismatch(const LinOp& op, int trials, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Tensor u = random_tensor(op.in_shape(), rng);
    const Tensor v = random_tensor(op.out_shape(), rng);
    const Tensor au = op.forward(u);
    const Tensor ahv = op.adjoint(v);
    const double lhs = std::abs(inner(au, v) - inner(u, ahv));
    const double scale = norm(au) * norm(v);
    if (scale > 0.0) worst = std::max(worst, lhs / scale);
  }
  return worst;
}

void validate_operator(const LinOp& op, std::uint64_t seed, int trials, double tol) {
  const double defect = adjoint_mismatch(op, trials, seed);
  if (defect > tol) {
    raise(ErrorKind::Validation,
          "adjoint self check failed: defect " + std::to_string(defect));
  }
}

}  // namespace pbn
