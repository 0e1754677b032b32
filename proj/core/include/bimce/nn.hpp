#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bimce/array.hpp"
#include "bimce/rng.hpp"
#include "bimce/tape.hpp"

namespace bimce {

/// Named trainable tensor with its gradient accumulator.
template <typename T>
struct ParamT {
  std::string name;
  NdArray<T> value;
  NdArray<T> grad;

  ParamT(std::string n, NdArray<T> val) : name(std::move(n)), value(std::move(val)) {
    grad = NdArray<T>(value.shape, T(0));
  }
};

using Param = ParamT<float>;

enum class Init { kHeUniform, kGlorotUniform, kZero };

/// fan_in/fan_out follow the tensor's role: dense [nin, nout], conv
/// [cout, cin, k, k].
template <typename T>
void init_weights(NdArray<T>& w, Init kind, uint64_t seed, double scale = 1.0) {
  if (kind == Init::kZero) {
    w.fill(T(0));
    return;
  }
  double fan_in = 0, fan_out = 0;
  if (w.rank() == 2) {
    fan_in = w.dim(0);
    fan_out = w.dim(1);
  } else if (w.rank() == 4) {
    const double rf = static_cast<double>(w.dim(2)) * w.dim(3);
    fan_in = w.dim(1) * rf;
    fan_out = w.dim(0) * rf;
  } else {
    fan_in = fan_out = static_cast<double>(w.numel());
  }
  const double limit = kind == Init::kHeUniform ? std::sqrt(6.0 / fan_in)
                                                : std::sqrt(6.0 / (fan_in + fan_out));
  Rng rng(seed);
  for (auto& x : w.v) x = static_cast<T>(scale * rng.uniform(-limit, limit));
}

/// Adam optimizer state (first/second moments per parameter plus the
/// shared step counter and hyperparameters).
template <typename T>
struct AdamStateT {
  T lr = static_cast<T>(1e-3);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
  int64_t t = 0;
  std::vector<NdArray<T>> m, v;

  void ensure(const std::vector<ParamT<T>>& params) {
    if (!m.empty()) {
      if (m.size() != params.size()) throw std::invalid_argument("adam: parameter count changed");
      return;
    }
    for (const auto& p : params) {
      m.emplace_back(p.value.shape, T(0));
      v.emplace_back(p.value.shape, T(0));
    }
  }
};

using AdamState = AdamStateT<float>;

/// One Adam update with bias correction; reads p.grad, writes p.value.
template <typename T>
void adam_step(std::vector<ParamT<T>>& params, AdamStateT<T>& st) {
  st.ensure(params);
  st.t += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(st.beta1), static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(st.beta2), static_cast<double>(st.t));
  for (size_t i = 0; i < params.size(); ++i) {
    NdArray<T>& val = params[i].value;
    const NdArray<T>& g = params[i].grad;
    if (!val.same_shape(g) || !val.same_shape(st.m[i]))
      throw std::invalid_argument("adam: shape mismatch for " + params[i].name);
    for (int64_t j = 0; j < val.numel(); ++j) {
      const size_t k = static_cast<size_t>(j);
      const T gj = g.v[k];
      st.m[i].v[k] = st.beta1 * st.m[i].v[k] + (T(1) - st.beta1) * gj;
      st.v[i].v[k] = st.beta2 * st.v[i].v[k] + (T(1) - st.beta2) * gj * gj;
      const double mhat = st.m[i].v[k] / bc1;
      const double vhat = st.v[i].v[k] / bc2;
      val.v[k] -= static_cast<T>(st.lr * mhat / (std::sqrt(vhat) + st.eps));
    }
  }
}

template <typename T>
void zero_grads(std::vector<ParamT<T>>& params) {
  for (auto& p : params) p.grad.fill(T(0));
}

/// Max relative error between the tape gradient and central finite
/// differences of a scalar-valued graph builder. `build` receives a tape
/// and the leaf node id of x and returns the loss node id.
template <typename T>
T finite_diff_check(const std::function<int(TapeT<T>&, int)>& build, const NdArray<T>& x, T h) {
  NdArray<T> analytic(x.shape, T(0));
  {
    TapeT<T> tape;
    NdArray<T> xcopy = x;
    const int xn = tape.leaf(xcopy, &analytic);
    const int loss = build(tape, xn);
    tape.backward(loss);
  }
  auto eval = [&](const NdArray<T>& pt) {
    TapeT<T> tape;
    const int xn = tape.leaf(pt);
    const int loss = build(tape, xn);
    return tape.value(loss).v[0];
  };
  NdArray<T> probe = x;
  T worst = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const size_t k = static_cast<size_t>(i);
    const T orig = probe.v[k];
    probe.v[k] = orig + h;
    const T fp = eval(probe);
    probe.v[k] = orig - h;
    const T fm = eval(probe);
    probe.v[k] = orig;
    const T numeric = (fp - fm) / (T(2) * h);
    const T err = std::abs(analytic.v[k] - numeric) /
                  (std::abs(numeric) + static_cast<T>(1e-8));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace bimce
