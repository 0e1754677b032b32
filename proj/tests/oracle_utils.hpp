#pragma once

// Test-side oracles, independent of the library implementation paths
// they check.

#include <cmath>
#include <complex>
#include <vector>

#include "bimce/array.hpp"
#include "bimce/rng.hpp"

namespace oracle {

template <typename T>
bimce::NdArray<T> rand_array(std::vector<int> shape, uint64_t seed, T lo = T(-1), T hi = T(1)) {
  bimce::NdArray<T> a(std::move(shape));
  bimce::Rng rng(seed);
  for (auto& x : a.v) x = static_cast<T>(rng.uniform(lo, hi));
  return a;
}

/// Direct nested-loop cross-correlation with zero same-padding.
template <typename T>
bimce::NdArray<T> brute_conv2d(const bimce::NdArray<T>& x, const bimce::NdArray<T>& k,
                               const bimce::NdArray<T>& bias) {
  const int bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = k.dim(0), ks = k.dim(2), pad = ks / 2;
  bimce::NdArray<T> out({bsz, cout, h, w});
  for (int n = 0; n < bsz; ++n)
    for (int co = 0; co < cout; ++co)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          double acc = bias.v[(size_t)co];
          for (int ci = 0; ci < cin; ++ci)
            for (int dy = 0; dy < ks; ++dy)
              for (int dx = 0; dx < ks; ++dx) {
                const int sy = y + dy - pad, sx = xx + dx - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                acc += static_cast<double>(x.at(n, ci, sy, sx)) * k.at(co, ci, dy, dx);
              }
          out.at(n, co, y, xx) = static_cast<T>(acc);
        }
  return out;
}

/// Row-by-column matrix product oracle for dense layers.
template <typename T>
bimce::NdArray<T> brute_dense(const bimce::NdArray<T>& x, const bimce::NdArray<T>& w,
                              const bimce::NdArray<T>& b) {
  const int rows = x.dim(0), nin = x.dim(1), nout = w.dim(1);
  bimce::NdArray<T> out({rows, nout});
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < nout; ++j) {
      double acc = b.v[(size_t)j];
      for (int i = 0; i < nin; ++i)
        acc += static_cast<double>(x.at(r, i)) * w.at(i, j);
      out.at(r, j) = static_cast<T>(acc);
    }
  return out;
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / (std::abs(b) + 1e-12);
}

}  // namespace oracle
