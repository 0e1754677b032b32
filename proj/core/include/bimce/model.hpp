#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bimce/nn.hpp"
#include "bimce/rng.hpp"
#include "bimce/tape.hpp"

namespace bimce {

enum class Backbone { kConv, kMixer };
enum class BimPlacement { kOff, kAll, kDenoiseOnly, kExpansionOnly };
enum class ActKind { kRelu, kSigmoid };

const char* to_string(Backbone b);
const char* to_string(BimPlacement p);
const char* to_string(ActKind a);
Backbone backbone_from_string(const std::string& s);
BimPlacement placement_from_string(const std::string& s);
ActKind act_from_string(const std::string& s);

/// Architecture description. Input planes are the LS estimate at pilot
/// resolution, (n_cp, n_lp, 2*n_rx); output is the full slot,
/// (n_c, n_l, 2*n_rx); channels carry interleaved real/imaginary parts.
struct ModelSpec {
  Backbone backbone = Backbone::kConv;
  BimPlacement placement = BimPlacement::kAll;
  int channels = 48;  // conv feature width
  int blocks = 4;     // residual / mixer block count
  int n_rx = 8;
  int n_cp = 24, n_lp = 2;  // pilot grid
  int n_c = 48, n_l = 14;   // full grid
  int bim_hidden = 0;       // 0: per-site max(n_rx, c/4)
  ActKind bim_inner = ActKind::kRelu;
  ActKind bim_outer = ActKind::kSigmoid;
  float belief_mean_db = -10.f;  // dB-domain standardization of the BIM input
  float belief_std_db = 6.f;
  int mixer_token_hidden = 0;    // 0: 2x token count
  int mixer_channel_hidden = 0;  // 0: 2x feature count

  int planes() const { return 2 * n_rx; }
  int bim_hidden_for(int c) const { return bim_hidden > 0 ? bim_hidden : std::max(n_rx, c / 4); }
  int mixer_features() const { return planes() * n_lp; }
  int mixer_out_features() const { return planes() * n_l; }
  int token_hidden() const { return mixer_token_hidden > 0 ? mixer_token_hidden : 2 * n_cp; }
  int channel_hidden() const {
    return mixer_channel_hidden > 0 ? mixer_channel_hidden : 2 * mixer_features();
  }
  bool gates_denoise() const {
    return placement == BimPlacement::kAll || placement == BimPlacement::kDenoiseOnly;
  }
  bool gates_expansion() const {
    return placement == BimPlacement::kAll || placement == BimPlacement::kExpansionOnly;
  }
  void validate() const;
};

/// Standalone belief-gate parameters (two FC layers).
template <typename T>
struct BimParamsT {
  NdArray<T> w1, b1, w2, b2;
  ActKind inner = ActKind::kRelu;
  ActKind outer = ActKind::kSigmoid;
  T mean_db = T(-10);
  T std_db = T(6);
};

using BimParams = BimParamsT<float>;

namespace detail {
template <typename T>
int apply_act(TapeT<T>& tape, int x, ActKind kind) {
  return kind == ActKind::kRelu ? tape.relu(x) : tape.sigmoid(x);
}
}  // namespace detail

/// Gate vector from a belief vector: S = outer(W2 inner(W1 I~ + b1) + b2)
/// where I~ is the standardized dB belief. Accepts [n_rx] or [B, n_rx].
template <typename T>
NdArray<T> bim_forward(const NdArray<T>& belief_mu_db, const BimParamsT<T>& p) {
  NdArray<T> in = belief_mu_db;
  if (in.rank() == 1) in.shape = {1, in.dim(0)};
  if (in.shape.back() != p.w1.dim(0))
    throw std::invalid_argument("bim_forward: belief length does not match W1");
  for (auto& x : in.v) x = (x - p.mean_db) / p.std_db;
  TapeT<T> tape;
  int h = detail::apply_act(tape, tape.dense(tape.leaf(in), tape.leaf(p.w1), tape.leaf(p.b1)),
                            p.inner);
  int s = detail::apply_act(tape, tape.dense(h, tape.leaf(p.w2), tape.leaf(p.b2)), p.outer);
  NdArray<T> out = tape.value(s);
  if (belief_mu_db.rank() == 1) out.shape = {out.dim(1)};
  return out;
}

/// Per-channel multiplicative gating of a feature tensor [B, c, ...].
template <typename T>
NdArray<T> bim_scale(const NdArray<T>& features, const NdArray<T>& gate) {
  TapeT<T> tape;
  return tape.value(tape.scale_channels(tape.leaf(features), tape.leaf(gate)));
}

/// Trainable channel-estimation network, conv or mixer backbone, with
/// belief gates at the sites selected by the placement.
template <typename T>
class ModelT {
 public:
  using Arr = NdArray<T>;

  ModelT(const ModelSpec& spec, uint64_t init_seed) : spec_(spec) {
    spec_.validate();
    if (spec_.backbone == Backbone::kConv)
      build_conv();
    else
      build_mixer();
    uint64_t idx = 0;
    for (auto& p : params_) {
      init_weights(p.value, inits_[idx].kind, derive_seed(init_seed, seed_tag::kWeightInit, idx),
                   inits_[idx].scale);
      ++idx;
    }
    for (size_t i : norm_gamma_) params_[i].value.fill(T(1));
  }

  const ModelSpec& spec() const { return spec_; }
  std::vector<ParamT<T>>& params() { return params_; }
  const std::vector<ParamT<T>>& params() const { return params_; }
  void zero_grads() { bimce::zero_grads(params_); }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  ParamT<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("model: unknown parameter " + name);
    return params_[it->second];
  }
  const ParamT<T>& param(const std::string& name) const {
    return const_cast<ModelT*>(this)->param(name);
  }

  /// Records the forward pass; planes [B, 2*n_rx, n_cp, n_lp], belief
  /// [B, n_rx] in dB. Returns the output node [B, 2*n_rx, n_c, n_l].
  int forward(TapeT<T>& tape, const Arr& planes, const Arr& belief_mu_db) {
    if (planes.rank() != 4 || planes.dim(1) != spec_.planes() || planes.dim(2) != spec_.n_cp ||
        planes.dim(3) != spec_.n_lp)
      throw std::invalid_argument("model: input shape " + shape_str(planes.shape) +
                                  " does not match spec");
    if (belief_mu_db.rank() != 2 || belief_mu_db.dim(0) != planes.dim(0) ||
        belief_mu_db.dim(1) != spec_.n_rx)
      throw std::invalid_argument("model: belief shape " + shape_str(belief_mu_db.shape));
    Arr bel = belief_mu_db;
    for (auto& x : bel.v)
      x = (x - static_cast<T>(spec_.belief_mean_db)) / static_cast<T>(spec_.belief_std_db);
    const int x = tape.leaf(planes);
    const int bn = tape.leaf(bel);
    return spec_.backbone == Backbone::kConv ? forward_conv(tape, x, bn)
                                             : forward_mixer(tape, x, bn);
  }

  Arr predict(const Arr& planes, const Arr& belief_mu_db) {
    TapeT<T> tape;
    return tape.value(forward(tape, planes, belief_mu_db));
  }

 private:
  struct InitPlan {
    Init kind;
    double scale;
  };

  ModelSpec spec_;
  std::vector<ParamT<T>> params_;
  std::vector<InitPlan> inits_;
  std::map<std::string, size_t> index_;

  // output layers start near zero so an untrained model predicts ~0
  static constexpr double kOutputInitScale = 0.05;

  int add_param(const std::string& name, std::vector<int> shape, Init kind, double scale = 1.0) {
    index_[name] = params_.size();
    params_.emplace_back(name, Arr(std::move(shape)));
    inits_.push_back({kind, scale});
    return static_cast<int>(params_.size()) - 1;
  }

  void add_conv(const std::string& name, int cin, int cout, Init kind, double scale = 1.0) {
    add_param(name + ".k", {cout, cin, 3, 3}, kind, scale);
    add_param(name + ".b", {cout}, Init::kZero);
  }

  void add_dense(const std::string& name, int nin, int nout, Init kind, double scale = 1.0) {
    add_param(name + ".w", {nin, nout}, kind, scale);
    add_param(name + ".b", {nout}, Init::kZero);
  }

  void add_bim(const std::string& site, int c) {
    const int hidden = spec_.bim_hidden_for(c);
    add_param(site + ".bim.w1", {spec_.n_rx, hidden},
              spec_.bim_inner == ActKind::kRelu ? Init::kHeUniform : Init::kGlorotUniform);
    add_param(site + ".bim.b1", {hidden}, Init::kZero);
    add_param(site + ".bim.w2", {hidden, c}, Init::kGlorotUniform);
    add_param(site + ".bim.b2", {c}, Init::kZero);
  }

  // gamma parameters start at 1 (restored after the init pass)
  void add_norm(const std::string& name, int feat) {
    norm_gamma_.push_back(static_cast<size_t>(
        add_param(name + ".gamma", {feat}, Init::kZero)));
    add_param(name + ".beta", {feat}, Init::kZero);
  }

  std::vector<size_t> norm_gamma_;

  void build_conv() {
    const int ch = spec_.channels, pl = spec_.planes();
    add_conv("in_conv", pl, ch, Init::kHeUniform);
    if (spec_.gates_denoise()) add_bim("in_conv", ch);
    for (int b = 0; b < spec_.blocks; ++b) {
      const std::string base = "block" + std::to_string(b);
      add_conv(base + ".c1", ch, ch, Init::kHeUniform);
      if (spec_.gates_denoise()) add_bim(base + ".c1", ch);
      add_conv(base + ".c2", ch, ch, Init::kGlorotUniform);
      if (spec_.gates_denoise()) add_bim(base + ".c2", ch);
    }
    add_conv("up_conv", ch, ch, Init::kHeUniform);
    if (spec_.gates_expansion()) add_bim("up_conv", ch);
    add_conv("out_conv", ch, pl, Init::kGlorotUniform, kOutputInitScale);
    if (spec_.gates_expansion()) add_bim("out_conv", pl);
  }

  void build_mixer() {
    const int feat = spec_.mixer_features();
    for (int b = 0; b < spec_.blocks; ++b) {
      const std::string base = "mix" + std::to_string(b);
      add_norm(base + ".norm_tok", feat);
      add_dense(base + ".tok1", spec_.n_cp, spec_.token_hidden(), Init::kHeUniform);
      add_dense(base + ".tok2", spec_.token_hidden(), spec_.n_cp, Init::kGlorotUniform);
      add_norm(base + ".norm_ch", feat);
      add_dense(base + ".ch1", feat, spec_.channel_hidden(), Init::kHeUniform);
      add_dense(base + ".ch2", spec_.channel_hidden(), feat, Init::kGlorotUniform);
      if (spec_.gates_denoise()) add_bim(base + ".ch2", feat);
    }
    add_dense("exp_tok", spec_.n_cp, spec_.n_c, Init::kGlorotUniform);
    add_dense("exp_feat", feat, spec_.mixer_out_features(), Init::kGlorotUniform,
              kOutputInitScale);
    if (spec_.gates_expansion()) add_bim("exp_feat", spec_.mixer_out_features());
  }

  int leaf_of(TapeT<T>& tape, const std::string& name) {
    ParamT<T>& p = param(name);
    return tape.leaf(p.value, &p.grad);
  }

  /// Gate vector node [B, c] for one site.
  int gate_node(TapeT<T>& tape, int bel, const std::string& site) {
    int h = tape.dense(bel, leaf_of(tape, site + ".bim.w1"), leaf_of(tape, site + ".bim.b1"));
    h = detail::apply_act(tape, h, spec_.bim_inner);
    h = tape.dense(h, leaf_of(tape, site + ".bim.w2"), leaf_of(tape, site + ".bim.b2"));
    return detail::apply_act(tape, h, spec_.bim_outer);
  }

  int conv_site(TapeT<T>& tape, int x, int bel, const std::string& name, bool gated) {
    int y = tape.conv2d(x, leaf_of(tape, name + ".k"), leaf_of(tape, name + ".b"));
    if (gated) y = tape.scale_channels(y, gate_node(tape, bel, name));
    return y;
  }

  int forward_conv(TapeT<T>& tape, int x, int bel) {
    const bool gd = spec_.gates_denoise(), ge = spec_.gates_expansion();
    int h = tape.relu(conv_site(tape, x, bel, "in_conv", gd));
    for (int b = 0; b < spec_.blocks; ++b) {
      const std::string base = "block" + std::to_string(b);
      int t = tape.relu(conv_site(tape, h, bel, base + ".c1", gd));
      t = conv_site(tape, t, bel, base + ".c2", gd);
      h = tape.add(h, t);
    }
    int u = tape.resize_nearest(h, spec_.n_c, spec_.n_l);
    u = tape.relu(conv_site(tape, u, bel, "up_conv", ge));
    return conv_site(tape, u, bel, "out_conv", ge);
  }

  int dense_site(TapeT<T>& tape, int x, const std::string& name) {
    return tape.dense(x, leaf_of(tape, name + ".w"), leaf_of(tape, name + ".b"));
  }

  int forward_mixer(TapeT<T>& tape, int x, int bel) {
    const bool gd = spec_.gates_denoise(), ge = spec_.gates_expansion();
    int tok = tape.tokens_from_planes(x);  // [B, n_cp, feat]
    for (int b = 0; b < spec_.blocks; ++b) {
      const std::string base = "mix" + std::to_string(b);
      int t = tape.layer_norm(tok, leaf_of(tape, base + ".norm_tok.gamma"),
                              leaf_of(tape, base + ".norm_tok.beta"));
      t = tape.transpose12(t);  // [B, feat, n_cp]
      t = tape.relu(dense_site(tape, t, base + ".tok1"));
      t = dense_site(tape, t, base + ".tok2");
      t = tape.transpose12(t);
      tok = tape.add(tok, t);

      int c = tape.layer_norm(tok, leaf_of(tape, base + ".norm_ch.gamma"),
                              leaf_of(tape, base + ".norm_ch.beta"));
      c = tape.relu(dense_site(tape, c, base + ".ch1"));
      c = dense_site(tape, c, base + ".ch2");
      if (gd) c = tape.scale_features(c, gate_node(tape, bel, base + ".ch2"));
      tok = tape.add(tok, c);
    }
    int t = tape.transpose12(tok);            // [B, feat, n_cp]
    t = dense_site(tape, t, "exp_tok");       // [B, feat, n_c]
    t = tape.transpose12(t);                  // [B, n_c, feat]
    t = dense_site(tape, t, "exp_feat");      // [B, n_c, out_feat]
    if (ge) t = tape.scale_features(t, gate_node(tape, bel, "exp_feat"));
    return tape.planes_from_tokens(t, spec_.n_l);  // [B, planes, n_c, n_l]
  }
};

using Model = ModelT<float>;
using ModelD = ModelT<double>;

}  // namespace bimce
