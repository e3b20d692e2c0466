#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "epicodec/common.hpp"

namespace epicodec {

// Dense (batch, height, width, channels) array. Convolution weights reuse the
// same container with the slots read as (kh, kw, in_c, out_c).
template <typename T>
struct Tensor {
  Shape shape{0, 0, 0, 0};
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(s), v(size_t(s.numel()), T(0)) {}
  Tensor(Shape s, T fill) : shape(s), v(size_t(s.numel()), fill) {}

  static Tensor zeros(Shape s) { return Tensor(s); }
  static Tensor full(Shape s, T val) { return Tensor(s, val); }

  int64_t numel() const { return shape.numel(); }

  T& at(int b, int h, int w, int c) {
    return v[size_t(((int64_t(b) * shape.h + h) * shape.w + w) * shape.c + c)];
  }
  const T& at(int b, int h, int w, int c) const {
    return v[size_t(((int64_t(b) * shape.h + h) * shape.w + w) * shape.c + c)];
  }

  T* ptr(int b, int h, int w) {
    return v.data() + size_t(((int64_t(b) * shape.h + h) * shape.w + w) * shape.c);
  }
  const T* ptr(int b, int h, int w) const {
    return v.data() + size_t(((int64_t(b) * shape.h + h) * shape.w + w) * shape.c);
  }

  void fill(T val) { std::fill(v.begin(), v.end(), val); }

  bool all_finite() const {
    for (const T& x : v)
      if (!std::isfinite(double(x))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
    return out;
  }
};

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (size_t i = 0; i < a.v.size(); ++i)
    m = std::max(m, std::abs(double(a.v[i]) - double(b.v[i])));
  return m;
}

}  // namespace epicodec
