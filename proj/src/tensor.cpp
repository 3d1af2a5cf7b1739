#include "pbn/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "pbn/errors.hpp"

namespace pbn {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

std::vector<std::size_t> shape_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  for (std::size_t e : shape_) {
    if (e == 0) raise(ErrorKind::Shape, "zero extent in shape " + shape_str(shape_));
  }
  data_.assign(shape_numel(shape_), cdouble(0.0, 0.0));
}

Tensor::Tensor(Shape shape, std::vector<cdouble> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    raise(ErrorKind::Shape, "data length " + std::to_string(data_.size()) +
                                " does not fill shape " + shape_str(shape_));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
  if (!a.same_shape(b)) {
    raise(ErrorKind::Shape, std::string(where) + ": " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

Tensor Tensor::operator+(const Tensor& o) const {
  Tensor r = *this;
  r += o;
  return r;
}

Tensor Tensor::operator-(const Tensor& o) const {
  Tensor r = *this;
  r -= o;
  return r;
}

Tensor Tensor::scaled(cdouble s) const {
  Tensor r = *this;
  r.scale(s);
  return r;
}

Tensor& Tensor::operator+=(const Tensor& o) {
  require_same_shape(*this, o, "tensor add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& o) {
  require_same_shape(*this, o, "tensor sub");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

Tensor& Tensor::scale(cdouble s) {
  for (auto& v : data_) v *= s;
  return *this;
}

Tensor& Tensor::axpy(cdouble a, const Tensor& x) {
  require_same_shape(*this, x, "tensor axpy");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += a * x.data_[i];
  return *this;
}

Tensor Tensor::hadamard(const Tensor& w) const {
  require_same_shape(*this, w, "hadamard");
  Tensor r = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) r.data_[i] *= w.data_[i];
  return r;
}

Tensor Tensor::conj_hadamard(const Tensor& w) const {
  require_same_shape(*this, w, "conj hadamard");
  Tensor r = *this;
  for (std::size_t i = 0; i < data_.size(); ++i) r.data_[i] *= std::conj(w.data_[i]);
  return r;
}

bool Tensor::finite() const {
  for (const auto& v : data_) {
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  }
  return true;
}

cdouble inner(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "inner product");
  cdouble acc(0.0, 0.0);
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::conj(a[i]) * b[i];
  return acc;
}

double real_inner(const Tensor& a, const Tensor& b) { return inner(a, b).real(); }

double norm(const Tensor& t) {
  double acc = 0.0;
  for (const auto& v : t.values()) acc += std::norm(v);
  return std::sqrt(acc);
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (const auto& v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

double rel_err(const Tensor& a, const Tensor& ref, double floor) {
  return norm(a - ref) / std::max(norm(ref), floor);
}

}  // namespace pbn
