#include "bimce/complexity.hpp"

namespace bimce {

namespace {

struct Counter {
  const ModelSpec& spec;
  Complexity c;

  void conv(int cin, int cout, int h, int w, int k = 3) {
    c.params += static_cast<int64_t>(k) * k * cin * cout + cout;
    c.flops += 2ll * k * k * cin * cout * h * w;
  }
  void dense(int nin, int nout, int64_t rows) {
    c.params += static_cast<int64_t>(nin) * nout + nout;
    c.flops += 2ll * nin * nout * rows;
  }
  void norm(int feat) { c.params += 2ll * feat; }
  void bim(int gated_channels, int64_t spatial) {
    const int hidden = spec.bim_hidden_for(gated_channels);
    c.params += static_cast<int64_t>(spec.n_rx) * hidden + hidden +
                static_cast<int64_t>(hidden) * gated_channels + gated_channels;
    c.flops += 2ll * (static_cast<int64_t>(spec.n_rx) * hidden +
                      static_cast<int64_t>(hidden) * gated_channels) +
               static_cast<int64_t>(gated_channels) * spatial;
  }
};

}  // namespace

Complexity count_complexity(const ModelSpec& spec) {
  spec.validate();
  Counter k{spec, {}};
  const int pl = spec.planes();
  if (spec.backbone == Backbone::kConv) {
    const int64_t pilot_sp = static_cast<int64_t>(spec.n_cp) * spec.n_lp;
    const int64_t full_sp = static_cast<int64_t>(spec.n_c) * spec.n_l;
    const int ch = spec.channels;
    k.conv(pl, ch, spec.n_cp, spec.n_lp);
    if (spec.gates_denoise()) k.bim(ch, pilot_sp);
    for (int b = 0; b < spec.blocks; ++b) {
      k.conv(ch, ch, spec.n_cp, spec.n_lp);
      if (spec.gates_denoise()) k.bim(ch, pilot_sp);
      k.conv(ch, ch, spec.n_cp, spec.n_lp);
      if (spec.gates_denoise()) k.bim(ch, pilot_sp);
    }
    k.conv(ch, ch, spec.n_c, spec.n_l);
    if (spec.gates_expansion()) k.bim(ch, full_sp);
    k.conv(ch, pl, spec.n_c, spec.n_l);
    if (spec.gates_expansion()) k.bim(pl, full_sp);
  } else {
    const int feat = spec.mixer_features();
    const int out_feat = spec.mixer_out_features();
    for (int b = 0; b < spec.blocks; ++b) {
      k.norm(feat);
      k.dense(spec.n_cp, spec.token_hidden(), feat);
      k.dense(spec.token_hidden(), spec.n_cp, feat);
      k.norm(feat);
      k.dense(feat, spec.channel_hidden(), spec.n_cp);
      k.dense(spec.channel_hidden(), feat, spec.n_cp);
      if (spec.gates_denoise()) k.bim(feat, spec.n_cp);
    }
    k.dense(spec.n_cp, spec.n_c, feat);
    k.dense(feat, out_feat, spec.n_c);
    if (spec.gates_expansion()) k.bim(out_feat, spec.n_c);
  }
  return k.c;
}

}  // namespace bimce
