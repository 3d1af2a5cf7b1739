#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace pbn {

using cdouble = std::complex<double>;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
/// Row-major strides (last axis contiguous).
std::vector<std::size_t> shape_strides(const Shape& s);

/// Dense complex tensor, row-major. Values are immutable by convention once
/// an object escapes the function that built it; all library operations
/// allocate fresh results instead of writing through shared state.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<cdouble> data);

  static Tensor zeros(const Shape& shape) { return Tensor(shape); }
  static Tensor scalar(cdouble v) { return Tensor({1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  cdouble& operator[](std::size_t i) { return data_[i]; }
  const cdouble& operator[](std::size_t i) const { return data_[i]; }
  std::span<const cdouble> values() const { return data_; }
  std::span<cdouble> values() { return data_; }

  Tensor operator+(const Tensor& o) const;
  Tensor operator-(const Tensor& o) const;
  Tensor scaled(cdouble s) const;
  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& scale(cdouble s);
  /// *this += a * x
  Tensor& axpy(cdouble a, const Tensor& x);
  /// Elementwise w .* x
  Tensor hadamard(const Tensor& w) const;
  /// Elementwise conj(w) .* x
  Tensor conj_hadamard(const Tensor& w) const;

  bool finite() const;

 private:
  Shape shape_;
  std::vector<cdouble> data_;
};

/// Inner product, conjugate-linear in the first argument.
cdouble inner(const Tensor& a, const Tensor& b);
double real_inner(const Tensor& a, const Tensor& b);
double norm(const Tensor& t);
double max_abs(const Tensor& t);
/// ||a - ref|| / max(||ref||, floor)
double rel_err(const Tensor& a, const Tensor& ref, double floor = 1e-300);

void require_same_shape(const Tensor& a, const Tensor& b, const char* where);

}  // namespace pbn
