#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace bimce {

/// Dense row-major n-dimensional array. Value type is a plain scalar
/// (float/double) for network tensors or std::complex<float> for grids.
template <typename T>
struct NdArray {
  std::vector<int> shape;
  std::vector<T> v;

  NdArray() = default;
  explicit NdArray(std::vector<int> s) : shape(std::move(s)), v(checked_numel(shape)) {}
  NdArray(std::vector<int> s, T fill) : shape(std::move(s)), v(checked_numel(shape), fill) {}

  static int64_t checked_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("NdArray: nonpositive dimension " + std::to_string(d));
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  T* data() { return v.data(); }
  const T* data() const { return v.data(); }
  bool same_shape(const NdArray& o) const { return shape == o.shape; }

  T& at(int i) { return v[static_cast<size_t>(i)]; }
  const T& at(int i) const { return v[static_cast<size_t>(i)]; }
  T& at(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }
  T& at(int i, int j, int k) {
    return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return v[(static_cast<size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return v[((static_cast<size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
};

using Tensor = NdArray<float>;
using TensorD = NdArray<double>;
using ComplexGrid = NdArray<std::complex<float>>;

template <typename T>
inline bool all_finite(const NdArray<T>& a) {
  for (const T& x : a.v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const ComplexGrid& a) {
  for (const auto& x : a.v)
    if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) return false;
  return true;
}

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace bimce
