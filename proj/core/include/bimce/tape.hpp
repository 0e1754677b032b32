#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "bimce/array.hpp"

namespace bimce {

enum class Op {
  kLeaf,
  kDense,
  kConv2d,
  kRelu,
  kSigmoid,
  kAdd,
  kSub,
  kMul,
  kScaleChannels,
  kScaleFeatures,
  kResizeNearest,
  kLayerNorm,
  kTranspose12,
  kReshape,
  kTokensFromPlanes,
  kPlanesFromTokens,
  kMse,
  kSum,
};

/// Reverse-mode tape. Nodes are appended in execution order, so the
/// sequence itself is a topological order; backward() is one reverse
/// sweep that visits each node exactly once.
///
/// Instantiated with T = float for training/inference and T = double
/// for the finite-difference gradient oracles.
template <typename T>
class TapeT {
 public:
  using Arr = NdArray<T>;
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatMap = Eigen::Map<Mat>;
  using CMatMap = Eigen::Map<const Mat>;

  struct Node {
    Op op;
    int a = -1, b = -1, c = -1;  // input node ids
    Arr value;
    Arr* sink = nullptr;  // leaf only: external gradient accumulator
    int i0 = 0, i1 = 0;   // op attributes (resize target, token width)
    std::vector<Arr> aux; // saved statistics (layer norm)
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  void reset() { nodes_.clear(); grads_.clear(); }

  const Arr& value(int n) const { return nodes_[static_cast<size_t>(n)].value; }

  /// Smallest |x| ever fed into a ReLU on this tape; finite-difference
  /// probes are only trustworthy when this margin exceeds the step.
  T min_abs_relu_input() const {
    T margin = std::numeric_limits<T>::max();
    for (const Node& nd : nodes_) {
      if (nd.op != Op::kRelu) continue;
      for (const T& x : nodes_[static_cast<size_t>(nd.a)].value.v)
        margin = std::min(margin, std::abs(x));
    }
    return margin;
  }

  /// Gradient of the last backward() pass w.r.t. node n (empty if the
  /// node was not reached).
  const Arr& grad(int n) const { return grads_[static_cast<size_t>(n)]; }

  /// Records an input. When grad_sink is non-null, backward() adds the
  /// gradient into it (training parameters); null marks a constant.
  int leaf(const Arr& value, Arr* grad_sink = nullptr) {
    Node nd;
    nd.op = Op::kLeaf;
    nd.value = value;
    nd.sink = grad_sink;
    return push(std::move(nd));
  }

  /// y = x W + b over the last axis; leading axes are batch rows.
  int dense(int x, int w, int b) {
    const Arr& xv = val(x);
    const Arr& wv = val(w);
    const Arr& bv = val(b);
    if (wv.rank() != 2) throw std::invalid_argument("dense: W must be 2-d");
    const int nin = wv.dim(0), nout = wv.dim(1);
    if (xv.rank() < 1 || xv.shape.back() != nin)
      throw std::invalid_argument("dense: input last dim " + shape_str(xv.shape) +
                                  " does not match W " + shape_str(wv.shape));
    if (bv.numel() != nout) throw std::invalid_argument("dense: bias length mismatch");
    const int64_t rows = xv.numel() / nin;

    Node nd;
    nd.op = Op::kDense;
    nd.a = x;
    nd.b = w;
    nd.c = b;
    std::vector<int> oshape = xv.shape;
    oshape.back() = nout;
    nd.value = Arr(oshape);
    CMatMap xm(xv.data(), rows, nin);
    CMatMap wm(wv.data(), nin, nout);
    MatMap om(nd.value.data(), rows, nout);
    om.noalias() = xm * wm;
    for (int64_t r = 0; r < rows; ++r)
      for (int j = 0; j < nout; ++j) nd.value.v[static_cast<size_t>(r) * nout + j] += bv.v[static_cast<size_t>(j)];
    return push(std::move(nd));
  }

  /// Cross-correlation with zero same-padding, stride 1, odd kernel.
  /// x: [B, Cin, H, W], k: [Cout, Cin, K, K], b: [Cout].
  int conv2d(int x, int k, int b) {
    const Arr& xv = val(x);
    const Arr& kv = val(k);
    const Arr& bv = val(b);
    if (xv.rank() != 4 || kv.rank() != 4)
      throw std::invalid_argument("conv2d: expected 4-d input and kernel");
    const int ksz = kv.dim(2);
    if (ksz != kv.dim(3) || ksz % 2 == 0)
      throw std::invalid_argument("conv2d: kernel must be square with odd size, got " +
                                  shape_str(kv.shape));
    if (kv.dim(1) != xv.dim(1))
      throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xv.shape) + " vs " +
                                  shape_str(kv.shape));
    const int cout = kv.dim(0);
    if (bv.numel() != cout) throw std::invalid_argument("conv2d: bias length mismatch");

    Node nd;
    nd.op = Op::kConv2d;
    nd.a = x;
    nd.b = k;
    nd.c = b;
    nd.value = Arr({xv.dim(0), cout, xv.dim(2), xv.dim(3)});
    conv_forward(xv, kv, bv, nd.value);
    return push(std::move(nd));
  }

  int relu(int x) { return unary(Op::kRelu, x); }
  int sigmoid(int x) { return unary(Op::kSigmoid, x); }

  int add(int a, int b) { return binary(Op::kAdd, a, b); }
  int sub(int a, int b) { return binary(Op::kSub, a, b); }
  int mul(int a, int b) { return binary(Op::kMul, a, b); }

  /// x: [B, C, ...spatial], s: [B, C] or [C]; per-channel scaling.
  int scale_channels(int x, int s) {
    const Arr& xv = val(x);
    const Arr& sv = val(s);
    if (xv.rank() < 2) throw std::invalid_argument("scale_channels: input rank < 2");
    check_gate_shape(sv, xv.dim(0), xv.dim(1), "scale_channels");
    Node nd;
    nd.op = Op::kScaleChannels;
    nd.a = x;
    nd.b = s;
    nd.value = Arr(xv.shape);
    const int bsz = xv.dim(0), ch = xv.dim(1);
    const int64_t sp = xv.numel() / (static_cast<int64_t>(bsz) * ch);
    const bool per_batch = sv.rank() == 2;
    for (int i = 0; i < bsz; ++i)
      for (int c = 0; c < ch; ++c) {
        const T g = per_batch ? sv.at(i, c) : sv.at(c);
        const int64_t base = (static_cast<int64_t>(i) * ch + c) * sp;
        for (int64_t p = 0; p < sp; ++p) nd.value.v[base + p] = xv.v[base + p] * g;
      }
    return push(std::move(nd));
  }

  /// x: [B, ...rows, F], s: [B, F] or [F]; per-feature scaling over the
  /// last axis (token-major layouts).
  int scale_features(int x, int s) {
    const Arr& xv = val(x);
    const Arr& sv = val(s);
    if (xv.rank() < 2) throw std::invalid_argument("scale_features: input rank < 2");
    const int feat = xv.shape.back();
    check_gate_shape(sv, xv.dim(0), feat, "scale_features");
    Node nd;
    nd.op = Op::kScaleFeatures;
    nd.a = x;
    nd.b = s;
    nd.value = Arr(xv.shape);
    const int bsz = xv.dim(0);
    const int64_t rows = xv.numel() / (static_cast<int64_t>(bsz) * feat);
    const bool per_batch = sv.rank() == 2;
    for (int i = 0; i < bsz; ++i)
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = (static_cast<int64_t>(i) * rows + r) * feat;
        for (int f = 0; f < feat; ++f)
          nd.value.v[base + f] = xv.v[base + f] * (per_batch ? sv.at(i, f) : sv.at(f));
      }
    return push(std::move(nd));
  }

  /// Nearest-neighbor spatial resize of [B, C, H, W]; source index is
  /// floor(dst * in / out) in each dimension.
  int resize_nearest(int x, int ho, int wo) {
    const Arr& xv = val(x);
    if (xv.rank() != 4) throw std::invalid_argument("resize_nearest: expected 4-d input");
    Node nd;
    nd.op = Op::kResizeNearest;
    nd.a = x;
    nd.i0 = ho;
    nd.i1 = wo;
    const int bsz = xv.dim(0), ch = xv.dim(1), hi = xv.dim(2), wi = xv.dim(3);
    nd.value = Arr({bsz, ch, ho, wo});
    for (int i = 0; i < bsz; ++i)
      for (int c = 0; c < ch; ++c)
        for (int y = 0; y < ho; ++y) {
          const int sy = static_cast<int>((static_cast<int64_t>(y) * hi) / ho);
          for (int xidx = 0; xidx < wo; ++xidx) {
            const int sx = static_cast<int>((static_cast<int64_t>(xidx) * wi) / wo);
            nd.value.at(i, c, y, xidx) = xv.at(i, c, sy, sx);
          }
        }
    return push(std::move(nd));
  }

  /// Layer normalization over the last axis with learnable gamma/beta.
  int layer_norm(int x, int gamma, int beta) {
    const Arr& xv = val(x);
    const Arr& gv = val(gamma);
    const Arr& bv = val(beta);
    const int feat = xv.shape.back();
    if (gv.numel() != feat || bv.numel() != feat)
      throw std::invalid_argument("layer_norm: gamma/beta length mismatch");
    const int64_t rows = xv.numel() / feat;
    Node nd;
    nd.op = Op::kLayerNorm;
    nd.a = x;
    nd.b = gamma;
    nd.c = beta;
    nd.value = Arr(xv.shape);
    nd.aux.emplace_back(Arr({static_cast<int>(rows)}));  // mean
    nd.aux.emplace_back(Arr({static_cast<int>(rows)}));  // rstd
    for (int64_t r = 0; r < rows; ++r) {
      const T* xp = xv.data() + r * feat;
      double m = 0.0;
      for (int f = 0; f < feat; ++f) m += xp[f];
      m /= feat;
      double var = 0.0;
      for (int f = 0; f < feat; ++f) {
        const double d = xp[f] - m;
        var += d * d;
      }
      var /= feat;
      const double rstd = 1.0 / std::sqrt(var + 1e-5);
      nd.aux[0].v[static_cast<size_t>(r)] = static_cast<T>(m);
      nd.aux[1].v[static_cast<size_t>(r)] = static_cast<T>(rstd);
      T* op = nd.value.data() + r * feat;
      for (int f = 0; f < feat; ++f)
        op[f] = static_cast<T>((xp[f] - m) * rstd) * gv.v[static_cast<size_t>(f)] +
                bv.v[static_cast<size_t>(f)];
    }
    return push(std::move(nd));
  }

  /// [B, A, C] -> [B, C, A]
  int transpose12(int x) {
    const Arr& xv = val(x);
    if (xv.rank() != 3) throw std::invalid_argument("transpose12: expected 3-d input");
    Node nd;
    nd.op = Op::kTranspose12;
    nd.a = x;
    nd.value = Arr({xv.dim(0), xv.dim(2), xv.dim(1)});
    transpose_copy(xv, nd.value);
    return push(std::move(nd));
  }

  int reshape(int x, std::vector<int> shape) {
    const Arr& xv = val(x);
    Node nd;
    nd.op = Op::kReshape;
    nd.a = x;
    nd.value = Arr(std::move(shape));
    if (nd.value.numel() != xv.numel()) throw std::invalid_argument("reshape: element count mismatch");
    nd.value.v = xv.v;
    return push(std::move(nd));
  }

  /// [B, C, H, W] -> [B, H, C*W]: one token per H position, features
  /// grouping (channel, W) pairs.
  int tokens_from_planes(int x) {
    const Arr& xv = val(x);
    if (xv.rank() != 4) throw std::invalid_argument("tokens_from_planes: expected 4-d input");
    const int bsz = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Node nd;
    nd.op = Op::kTokensFromPlanes;
    nd.a = x;
    nd.value = Arr({bsz, h, ch * w});
    for (int i = 0; i < bsz; ++i)
      for (int c = 0; c < ch; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) nd.value.at(i, y, c * w + xx) = xv.at(i, c, y, xx);
    return push(std::move(nd));
  }

  /// Inverse of tokens_from_planes: [B, H, C*W] -> [B, C, H, W] for the
  /// given trailing width w.
  int planes_from_tokens(int x, int w) {
    const Arr& xv = val(x);
    if (xv.rank() != 3 || xv.dim(2) % w != 0)
      throw std::invalid_argument("planes_from_tokens: bad shape");
    const int bsz = xv.dim(0), h = xv.dim(1), ch = xv.dim(2) / w;
    Node nd;
    nd.op = Op::kPlanesFromTokens;
    nd.a = x;
    nd.i0 = w;
    nd.value = Arr({bsz, ch, h, w});
    for (int i = 0; i < bsz; ++i)
      for (int c = 0; c < ch; ++c)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) nd.value.at(i, c, y, xx) = xv.at(i, y, c * w + xx);
    return push(std::move(nd));
  }

  /// Scalar mean squared error between two same-shape tensors.
  int mse(int pred, int target) {
    const Arr& pv = val(pred);
    const Arr& tv = val(target);
    if (!pv.same_shape(tv)) throw std::invalid_argument("mse: shape mismatch");
    Node nd;
    nd.op = Op::kMse;
    nd.a = pred;
    nd.b = target;
    nd.value = Arr({1});
    double acc = 0.0;
    for (int64_t i = 0; i < pv.numel(); ++i) {
      const double d = static_cast<double>(pv.v[static_cast<size_t>(i)]) - tv.v[static_cast<size_t>(i)];
      acc += d * d;
    }
    nd.value.v[0] = static_cast<T>(acc / static_cast<double>(pv.numel()));
    return push(std::move(nd));
  }

  /// Scalar sum of all elements.
  int sum(int x) {
    const Arr& xv = val(x);
    Node nd;
    nd.op = Op::kSum;
    nd.a = x;
    nd.value = Arr({1});
    double acc = 0.0;
    for (const T& e : xv.v) acc += e;
    nd.value.v[0] = static_cast<T>(acc);
    return push(std::move(nd));
  }

  /// Reverse sweep from a scalar loss node. Gradients of leaves with a
  /// sink are accumulated (+=) into the sink; callers zero sinks between
  /// steps. Internal per-node gradients are recomputed from scratch, so
  /// repeated backward passes over the same tape agree exactly.
  void backward(int loss) {
    if (loss < 0 || loss >= size()) throw std::invalid_argument("backward: bad node id");
    if (nodes_[static_cast<size_t>(loss)].value.numel() != 1)
      throw std::invalid_argument("backward: loss node is not scalar");
    grads_.assign(nodes_.size(), Arr{});
    grads_[static_cast<size_t>(loss)] = Arr({1}, static_cast<T>(1));
    for (int n = loss; n >= 0; --n) {
      if (grads_[static_cast<size_t>(n)].numel() == 0) continue;
      backprop_node(n);
    }
    for (size_t n = 0; n < nodes_.size(); ++n) {
      Node& nd = nodes_[n];
      if (nd.op == Op::kLeaf && nd.sink != nullptr && grads_[n].numel() != 0) {
        if (!nd.sink->same_shape(grads_[n]))
          throw std::invalid_argument("backward: gradient sink shape mismatch");
        for (int64_t i = 0; i < grads_[n].numel(); ++i)
          nd.sink->v[static_cast<size_t>(i)] += grads_[n].v[static_cast<size_t>(i)];
      }
    }
  }

 private:
  std::vector<Node> nodes_;
  std::vector<Arr> grads_;

  const Arr& val(int n) const { return nodes_[static_cast<size_t>(n)].value; }

  int push(Node&& nd) {
    nodes_.push_back(std::move(nd));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static void check_gate_shape(const Arr& s, int bsz, int ch, const char* who) {
    const bool ok = (s.rank() == 1 && s.dim(0) == ch) ||
                    (s.rank() == 2 && s.dim(0) == bsz && s.dim(1) == ch);
    if (!ok)
      throw std::invalid_argument(std::string(who) + ": gate shape " + shape_str(s.shape) +
                                  " incompatible with [" + std::to_string(bsz) + "," +
                                  std::to_string(ch) + ",...]");
  }

  int unary(Op op, int x) {
    const Arr& xv = val(x);
    Node nd;
    nd.op = op;
    nd.a = x;
    nd.value = Arr(xv.shape);
    if (op == Op::kRelu) {
      for (int64_t i = 0; i < xv.numel(); ++i)
        nd.value.v[static_cast<size_t>(i)] = xv.v[static_cast<size_t>(i)] > T(0) ? xv.v[static_cast<size_t>(i)] : T(0);
    } else {
      for (int64_t i = 0; i < xv.numel(); ++i) {
        const T z = xv.v[static_cast<size_t>(i)];
        // numerically stable logistic
        nd.value.v[static_cast<size_t>(i)] =
            z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
      }
    }
    return push(std::move(nd));
  }

  int binary(Op op, int a, int b) {
    const Arr& av = val(a);
    const Arr& bv = val(b);
    if (!av.same_shape(bv))
      throw std::invalid_argument("elementwise op: shape mismatch " + shape_str(av.shape) +
                                  " vs " + shape_str(bv.shape));
    Node nd;
    nd.op = op;
    nd.a = a;
    nd.b = b;
    nd.value = Arr(av.shape);
    for (int64_t i = 0; i < av.numel(); ++i) {
      const T x = av.v[static_cast<size_t>(i)], y = bv.v[static_cast<size_t>(i)];
      nd.value.v[static_cast<size_t>(i)] = op == Op::kAdd ? x + y : (op == Op::kSub ? x - y : x * y);
    }
    return push(std::move(nd));
  }

  static void transpose_copy(const Arr& in, Arr& out) {
    const int bsz = in.dim(0), a = in.dim(1), c = in.dim(2);
    for (int i = 0; i < bsz; ++i)
      for (int j = 0; j < a; ++j)
        for (int k = 0; k < c; ++k) out.at(i, k, j) = in.at(i, j, k);
  }

  Arr& grad_buf(int n, const std::vector<int>& shape) {
    Arr& g = grads_[static_cast<size_t>(n)];
    if (g.numel() == 0) g = Arr(shape, T(0));
    return g;
  }

  // --- convolution kernels -------------------------------------------------

  static int64_t conv_chunk_samples(int64_t per_sample_rows, int64_t kdim) {
    const int64_t budget = 24ll << 20;  // col buffer target, bytes
    int64_t n = budget / (per_sample_rows * kdim * static_cast<int64_t>(sizeof(T)));
    return std::max<int64_t>(1, n);
  }

  static void im2col(const Arr& x, int b0, int bn, int ksz, std::vector<T>& col) {
    const int ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int pad = ksz / 2;
    const int64_t kdim = static_cast<int64_t>(ch) * ksz * ksz;
    col.assign(static_cast<size_t>(bn) * h * w * kdim, T(0));
    for (int bb = 0; bb < bn; ++bb) {
      const T* xp = x.data() + static_cast<int64_t>(b0 + bb) * ch * h * w;
      T* cp = col.data() + static_cast<int64_t>(bb) * h * w * kdim;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          T* row = cp + (static_cast<int64_t>(y) * w + xx) * kdim;
          for (int c = 0; c < ch; ++c)
            for (int di = 0; di < ksz; ++di) {
              const int sy = y + di - pad;
              if (sy < 0 || sy >= h) continue;
              for (int dj = 0; dj < ksz; ++dj) {
                const int sx = xx + dj - pad;
                if (sx < 0 || sx >= w) continue;
                row[(static_cast<int64_t>(c) * ksz + di) * ksz + dj] =
                    xp[(static_cast<int64_t>(c) * h + sy) * w + sx];
              }
            }
        }
    }
  }

  void conv_forward(const Arr& x, const Arr& k, const Arr& bias, Arr& out) const {
    const int bsz = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int cout = k.dim(0), ksz = k.dim(2);
    const int64_t kdim = static_cast<int64_t>(k.dim(1)) * ksz * ksz;
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int64_t chunk = conv_chunk_samples(hw, kdim);
    std::vector<T> col;
    Mat rows_out;
    CMatMap wm(k.data(), cout, kdim);
    for (int b0 = 0; b0 < bsz; b0 += static_cast<int>(chunk)) {
      const int bn = std::min<int>(static_cast<int>(chunk), bsz - b0);
      im2col(x, b0, bn, ksz, col);
      CMatMap cm(col.data(), static_cast<int64_t>(bn) * hw, kdim);
      rows_out.noalias() = cm * wm.transpose();
      // scatter rows [(b,y,x), cout] into out [b, cout, y, x]
      for (int bb = 0; bb < bn; ++bb)
        for (int co = 0; co < cout; ++co) {
          T* op = out.data() + ((static_cast<int64_t>(b0 + bb) * cout) + co) * hw;
          const T bval = bias.v[static_cast<size_t>(co)];
          for (int64_t p = 0; p < hw; ++p)
            op[p] = rows_out(static_cast<int64_t>(bb) * hw + p, co) + bval;
        }
    }
  }

  void conv_backward(const Node& nd, const Arr& dout) {
    const Arr& x = val(nd.a);
    const Arr& k = val(nd.b);
    const int bsz = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int cout = k.dim(0), ksz = k.dim(2);
    const int pad = ksz / 2;
    const int64_t kdim = static_cast<int64_t>(ch) * ksz * ksz;
    const int64_t hw = static_cast<int64_t>(h) * w;

    Arr& dx = grad_buf(nd.a, x.shape);
    Arr& dk = grad_buf(nd.b, k.shape);
    Arr& db = grad_buf(nd.c, val(nd.c).shape);

    // bias: plain reduction, double accumulation
    {
      std::vector<double> acc(static_cast<size_t>(cout), 0.0);
      for (int bb = 0; bb < bsz; ++bb)
        for (int co = 0; co < cout; ++co) {
          const T* dp = dout.data() + (static_cast<int64_t>(bb) * cout + co) * hw;
          double s = 0.0;
          for (int64_t p = 0; p < hw; ++p) s += dp[p];
          acc[static_cast<size_t>(co)] += s;
        }
      for (int co = 0; co < cout; ++co) db.v[static_cast<size_t>(co)] += static_cast<T>(acc[static_cast<size_t>(co)]);
    }

    const int64_t chunk = conv_chunk_samples(hw, kdim);
    std::vector<T> col;
    Mat drows(static_cast<int64_t>(std::min<int64_t>(chunk, bsz)) * hw, cout);
    Mat dcol;
    CMatMap wm(k.data(), cout, kdim);
    MatMap dkm(dk.data(), cout, kdim);
    for (int b0 = 0; b0 < bsz; b0 += static_cast<int>(chunk)) {
      const int bn = std::min<int>(static_cast<int>(chunk), bsz - b0);
      // gather dout into row layout
      drows.resize(static_cast<int64_t>(bn) * hw, cout);
      for (int bb = 0; bb < bn; ++bb)
        for (int co = 0; co < cout; ++co) {
          const T* dp = dout.data() + (static_cast<int64_t>(b0 + bb) * cout + co) * hw;
          for (int64_t p = 0; p < hw; ++p) drows(static_cast<int64_t>(bb) * hw + p, co) = dp[p];
        }
      im2col(x, b0, bn, ksz, col);
      CMatMap cm(col.data(), static_cast<int64_t>(bn) * hw, kdim);
      dkm.noalias() += drows.transpose() * cm;
      dcol.noalias() = drows * wm;
      // col2im scatter-add
      for (int bb = 0; bb < bn; ++bb) {
        T* dxp = dx.data() + static_cast<int64_t>(b0 + bb) * ch * hw;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const int64_t r = (static_cast<int64_t>(bb) * h + y) * w + xx;
            for (int c = 0; c < ch; ++c)
              for (int di = 0; di < ksz; ++di) {
                const int sy = y + di - pad;
                if (sy < 0 || sy >= h) continue;
                for (int dj = 0; dj < ksz; ++dj) {
                  const int sx = xx + dj - pad;
                  if (sx < 0 || sx >= w) continue;
                  dxp[(static_cast<int64_t>(c) * h + sy) * w + sx] +=
                      dcol(r, (static_cast<int64_t>(c) * ksz + di) * ksz + dj);
                }
              }
          }
      }
    }
  }

  // --- backward dispatch ----------------------------------------------------

  void backprop_node(int n) {
    Node& nd = nodes_[static_cast<size_t>(n)];
    const Arr& g = grads_[static_cast<size_t>(n)];
    switch (nd.op) {
      case Op::kLeaf:
        break;
      case Op::kDense: {
        const Arr& xv = val(nd.a);
        const Arr& wv = val(nd.b);
        const int nin = wv.dim(0), nout = wv.dim(1);
        const int64_t rows = xv.numel() / nin;
        Arr& dx = grad_buf(nd.a, xv.shape);
        Arr& dw = grad_buf(nd.b, wv.shape);
        Arr& db = grad_buf(nd.c, val(nd.c).shape);
        CMatMap gm(g.data(), rows, nout);
        CMatMap xm(xv.data(), rows, nin);
        CMatMap wm(wv.data(), nin, nout);
        MatMap dxm(dx.data(), rows, nin);
        MatMap dwm(dw.data(), nin, nout);
        dxm.noalias() += gm * wm.transpose();
        dwm.noalias() += xm.transpose() * gm;
        for (int j = 0; j < nout; ++j) {
          double acc = 0.0;
          for (int64_t r = 0; r < rows; ++r) acc += gm(r, j);
          db.v[static_cast<size_t>(j)] += static_cast<T>(acc);
        }
        break;
      }
      case Op::kConv2d:
        conv_backward(nd, g);
        break;
      case Op::kRelu: {
        Arr& dx = grad_buf(nd.a, nd.value.shape);
        for (int64_t i = 0; i < nd.value.numel(); ++i)
          if (nd.value.v[static_cast<size_t>(i)] > T(0)) dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
        break;
      }
      case Op::kSigmoid: {
        Arr& dx = grad_buf(nd.a, nd.value.shape);
        for (int64_t i = 0; i < nd.value.numel(); ++i) {
          const T y = nd.value.v[static_cast<size_t>(i)];
          dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * y * (T(1) - y);
        }
        break;
      }
      case Op::kAdd: {
        Arr& da = grad_buf(nd.a, nd.value.shape);
        Arr& dbb = grad_buf(nd.b, nd.value.shape);
        for (int64_t i = 0; i < g.numel(); ++i) {
          da.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
          dbb.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
        }
        break;
      }
      case Op::kSub: {
        Arr& da = grad_buf(nd.a, nd.value.shape);
        Arr& dbb = grad_buf(nd.b, nd.value.shape);
        for (int64_t i = 0; i < g.numel(); ++i) {
          da.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
          dbb.v[static_cast<size_t>(i)] -= g.v[static_cast<size_t>(i)];
        }
        break;
      }
      case Op::kMul: {
        const Arr& av = val(nd.a);
        const Arr& bv = val(nd.b);
        Arr& da = grad_buf(nd.a, av.shape);
        Arr& dbb = grad_buf(nd.b, bv.shape);
        for (int64_t i = 0; i < g.numel(); ++i) {
          da.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * bv.v[static_cast<size_t>(i)];
          dbb.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)] * av.v[static_cast<size_t>(i)];
        }
        break;
      }
      case Op::kScaleChannels: {
        const Arr& xv = val(nd.a);
        const Arr& sv = val(nd.b);
        Arr& dx = grad_buf(nd.a, xv.shape);
        Arr& ds = grad_buf(nd.b, sv.shape);
        const int bsz = xv.dim(0), ch = xv.dim(1);
        const int64_t sp = xv.numel() / (static_cast<int64_t>(bsz) * ch);
        const bool per_batch = sv.rank() == 2;
        for (int i = 0; i < bsz; ++i)
          for (int c = 0; c < ch; ++c) {
            const T gate = per_batch ? sv.at(i, c) : sv.at(c);
            const int64_t base = (static_cast<int64_t>(i) * ch + c) * sp;
            double acc = 0.0;
            for (int64_t p = 0; p < sp; ++p) {
              dx.v[base + p] += g.v[base + p] * gate;
              acc += static_cast<double>(g.v[base + p]) * xv.v[base + p];
            }
            if (per_batch)
              ds.at(i, c) += static_cast<T>(acc);
            else
              ds.at(c) += static_cast<T>(acc);
          }
        break;
      }
      case Op::kScaleFeatures: {
        const Arr& xv = val(nd.a);
        const Arr& sv = val(nd.b);
        Arr& dx = grad_buf(nd.a, xv.shape);
        Arr& ds = grad_buf(nd.b, sv.shape);
        const int bsz = xv.dim(0);
        const int feat = xv.shape.back();
        const int64_t rows = xv.numel() / (static_cast<int64_t>(bsz) * feat);
        const bool per_batch = sv.rank() == 2;
        std::vector<double> acc(static_cast<size_t>(feat));
        for (int i = 0; i < bsz; ++i) {
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int64_t r = 0; r < rows; ++r) {
            const int64_t base = (static_cast<int64_t>(i) * rows + r) * feat;
            for (int f = 0; f < feat; ++f) {
              const T gate = per_batch ? sv.at(i, f) : sv.at(f);
              dx.v[base + f] += g.v[base + f] * gate;
              acc[static_cast<size_t>(f)] += static_cast<double>(g.v[base + f]) * xv.v[base + f];
            }
          }
          for (int f = 0; f < feat; ++f) {
            if (per_batch)
              ds.at(i, f) += static_cast<T>(acc[static_cast<size_t>(f)]);
            else
              ds.at(f) += static_cast<T>(acc[static_cast<size_t>(f)]);
          }
        }
        break;
      }
      case Op::kResizeNearest: {
        const Arr& xv = val(nd.a);
        Arr& dx = grad_buf(nd.a, xv.shape);
        const int bsz = xv.dim(0), ch = xv.dim(1), hi = xv.dim(2), wi = xv.dim(3);
        const int ho = nd.i0, wo = nd.i1;
        for (int i = 0; i < bsz; ++i)
          for (int c = 0; c < ch; ++c)
            for (int y = 0; y < ho; ++y) {
              const int sy = static_cast<int>((static_cast<int64_t>(y) * hi) / ho);
              for (int xx = 0; xx < wo; ++xx) {
                const int sx = static_cast<int>((static_cast<int64_t>(xx) * wi) / wo);
                dx.at(i, c, sy, sx) += g.at(i, c, y, xx);
              }
            }
        break;
      }
      case Op::kLayerNorm: {
        const Arr& xv = val(nd.a);
        const Arr& gv = val(nd.b);
        Arr& dx = grad_buf(nd.a, xv.shape);
        Arr& dgamma = grad_buf(nd.b, gv.shape);
        Arr& dbeta = grad_buf(nd.c, val(nd.c).shape);
        const int feat = xv.shape.back();
        const int64_t rows = xv.numel() / feat;
        std::vector<double> dgacc(static_cast<size_t>(feat), 0.0), dbacc(static_cast<size_t>(feat), 0.0);
        for (int64_t r = 0; r < rows; ++r) {
          const T* xp = xv.data() + r * feat;
          const T* gp = g.data() + r * feat;
          T* dxp = dx.data() + r * feat;
          const double m = nd.aux[0].v[static_cast<size_t>(r)];
          const double rstd = nd.aux[1].v[static_cast<size_t>(r)];
          double s1 = 0.0, s2 = 0.0;
          for (int f = 0; f < feat; ++f) {
            const double xhat = (xp[f] - m) * rstd;
            const double dxhat = static_cast<double>(gp[f]) * gv.v[static_cast<size_t>(f)];
            s1 += dxhat;
            s2 += dxhat * xhat;
            dgacc[static_cast<size_t>(f)] += static_cast<double>(gp[f]) * xhat;
            dbacc[static_cast<size_t>(f)] += gp[f];
          }
          s1 /= feat;
          s2 /= feat;
          for (int f = 0; f < feat; ++f) {
            const double xhat = (xp[f] - m) * rstd;
            const double dxhat = static_cast<double>(gp[f]) * gv.v[static_cast<size_t>(f)];
            dxp[f] += static_cast<T>(rstd * (dxhat - s1 - xhat * s2));
          }
        }
        for (int f = 0; f < feat; ++f) {
          dgamma.v[static_cast<size_t>(f)] += static_cast<T>(dgacc[static_cast<size_t>(f)]);
          dbeta.v[static_cast<size_t>(f)] += static_cast<T>(dbacc[static_cast<size_t>(f)]);
        }
        break;
      }
      case Op::kTranspose12: {
        const Arr& xv = val(nd.a);
        Arr& dx = grad_buf(nd.a, xv.shape);
        const int bsz = xv.dim(0), a = xv.dim(1), c = xv.dim(2);
        for (int i = 0; i < bsz; ++i)
          for (int j = 0; j < a; ++j)
            for (int k = 0; k < c; ++k) dx.at(i, j, k) += g.at(i, k, j);
        break;
      }
      case Op::kReshape: {
        const Arr& xv = val(nd.a);
        Arr& dx = grad_buf(nd.a, xv.shape);
        for (int64_t i = 0; i < g.numel(); ++i) dx.v[static_cast<size_t>(i)] += g.v[static_cast<size_t>(i)];
        break;
      }
      case Op::kTokensFromPlanes: {
        const Arr& xv = val(nd.a);
        Arr& dx = grad_buf(nd.a, xv.shape);
        const int bsz = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
        for (int i = 0; i < bsz; ++i)
          for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < w; ++xx) dx.at(i, c, y, xx) += g.at(i, y, c * w + xx);
        break;
      }
      case Op::kPlanesFromTokens: {
        const Arr& xv = val(nd.a);
        Arr& dx = grad_buf(nd.a, xv.shape);
        const int w = nd.i0;
        const int bsz = nd.value.dim(0), ch = nd.value.dim(1), h = nd.value.dim(2);
        for (int i = 0; i < bsz; ++i)
          for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < w; ++xx) dx.at(i, y, c * w + xx) += g.at(i, c, y, xx);
        break;
      }
      case Op::kMse: {
        const Arr& pv = val(nd.a);
        const Arr& tv = val(nd.b);
        Arr& dp = grad_buf(nd.a, pv.shape);
        const T gl = g.v[0];
        const T scale = gl * T(2) / static_cast<T>(pv.numel());
        for (int64_t i = 0; i < pv.numel(); ++i)
          dp.v[static_cast<size_t>(i)] += scale * (pv.v[static_cast<size_t>(i)] - tv.v[static_cast<size_t>(i)]);
        break;
      }
      case Op::kSum: {
        const Arr& xv = val(nd.a);
        Arr& dx = grad_buf(nd.a, xv.shape);
        const T gl = g.v[0];
        for (int64_t i = 0; i < xv.numel(); ++i) dx.v[static_cast<size_t>(i)] += gl;
        break;
      }
    }
  }
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace bimce
