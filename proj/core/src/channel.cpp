#include "bimce/channel.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bimce/rng.hpp"

namespace bimce {

namespace {

constexpr int kSinusoidsPerTap = 64;

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

void fail(const std::string& field, const std::string& why) {
  throw std::invalid_argument("SimConfig." + field + ": " + why);
}

/// Covariance of the stacked channel over all resource elements,
/// C = sum_{i,l} H_il^H H_il, computed exactly from the tap structure:
/// the (i,l) sum factorizes into a frequency term and a time term per
/// tap pair.
MatrixXcd wideband_covariance(const TapSet& t) {
  const int nt = t.n_taps;
  MatrixXcd c = MatrixXcd::Zero(t.n_tx, t.n_tx);
  // per-tap frequency and time vectors
  std::vector<VectorXcd> evec(nt), cvec(nt);
  for (int n = 0; n < nt; ++n) {
    evec[n].resize(t.n_c);
    for (int i = 0; i < t.n_c; ++i) evec[n](i) = t.freq_phase(n, i);
    cvec[n].resize(t.n_l);
    for (int l = 0; l < t.n_l; ++l) cvec[n](l) = t.time_gain(n, l);
  }
  for (int n = 0; n < nt; ++n) {
    for (int m = 0; m < nt; ++m) {
      std::complex<double> udot = 0.0;
      for (int r = 0; r < t.n_rx; ++r) udot += std::conj(t.ue_gain[n][r]) * t.ue_gain[m][r];
      const std::complex<double> w = std::sqrt(t.power[n] * t.power[m]) *
                                     evec[n].dot(evec[m]) * cvec[n].dot(cvec[m]) * udot;
      if (std::abs(w) == 0.0) continue;
      for (int b = 0; b < t.n_tx; ++b)
        for (int b2 = 0; b2 < t.n_tx; ++b2)
          c(b, b2) += w * std::conj(t.steer[n][b]) * t.steer[m][b2];
    }
  }
  return c;
}

MatrixXcd grid_covariance(const ComplexGrid& h) {
  const int n_rx = h.dim(0), n_tx = h.dim(1), n_c = h.dim(2), n_l = h.dim(3);
  MatrixXcd m(static_cast<int64_t>(n_rx) * n_c * n_l, n_tx);
  int64_t row = 0;
  for (int i = 0; i < n_c; ++i)
    for (int l = 0; l < n_l; ++l)
      for (int r = 0; r < n_rx; ++r, ++row)
        for (int b = 0; b < n_tx; ++b) m(row, b) = std::complex<double>(h.at(r, b, i, l));
  return m.adjoint() * m;
}

ComplexGrid top_eigenvectors(const MatrixXcd& c, int n_streams) {
  const double tr = c.real().trace();
  if (!(tr > 0.0)) throw std::runtime_error("svd_precode: channel is identically zero");
  Eigen::SelfAdjointEigenSolver<MatrixXcd> eig(c);
  if (eig.info() != Eigen::Success) throw std::runtime_error("svd_precode: eigensolver failed");
  const int n_tx = static_cast<int>(c.rows());
  ComplexGrid p({n_tx, n_streams});
  for (int s = 0; s < n_streams; ++s) {
    VectorXcd v = eig.eigenvectors().col(n_tx - 1 - s);  // eigenvalues ascend
    // deterministic phase: first non-negligible entry made real positive
    const double vmax = v.cwiseAbs().maxCoeff();
    for (int b = 0; b < n_tx; ++b) {
      if (std::abs(v(b)) > 1e-6 * vmax) {
        v *= std::conj(v(b)) / std::abs(v(b));
        break;
      }
    }
    v.normalize();
    for (int b = 0; b < n_tx; ++b) p.at(b, s) = std::complex<float>(v(b));
  }
  return p;
}

}  // namespace

void SimConfig::validate() const {
  if (!(carrier_frequency_hz > 0)) fail("carrier_frequency_hz", "must be positive");
  if (!(subcarrier_spacing_hz > 0)) fail("subcarrier_spacing_hz", "must be positive");
  if (n_tx < 1) fail("n_tx", "must be positive");
  if (n_rx < 1) fail("n_rx", "must be positive");
  if (n_streams < 1) fail("n_streams", "must be positive");
  if (n_streams > std::min(n_tx, n_rx))
    fail("n_streams", "must not exceed min(n_tx, n_rx) = " +
                          std::to_string(std::min(n_tx, n_rx)));
  if (n_subcarriers < 1) fail("n_subcarriers", "must be positive");
  if (n_symbols < 1) fail("n_symbols", "must be positive");
  if (ue_speed_mps < 0) fail("ue_speed_mps", "must be nonnegative");
  if (num_taps < 1) fail("num_taps", "must be at least 1");
  if (!(delay_spread_s >= 0)) fail("delay_spread_s", "must be nonnegative");
}

std::complex<double> TapSet::time_gain(int tap, int l) const {
  const double t = l * symbol_duration_s;
  const auto& fr = sos_freq[static_cast<size_t>(tap)];
  const auto& ph = sos_phase[static_cast<size_t>(tap)];
  std::complex<double> acc = 0.0;
  for (size_t m = 0; m < fr.size(); ++m) {
    const double arg = fr[m] * t + ph[m];
    acc += std::complex<double>(std::cos(arg), std::sin(arg));
  }
  return acc / std::sqrt(static_cast<double>(fr.size()));
}

std::complex<double> TapSet::freq_phase(int tap, int i) const {
  const double f = (i - 0.5 * (n_c - 1)) * subcarrier_spacing_hz;
  const double arg = -2.0 * std::numbers::pi * f * delay_s[static_cast<size_t>(tap)];
  return {std::cos(arg), std::sin(arg)};
}

TapSet make_taps(const SimConfig& cfg, uint64_t seed) {
  cfg.validate();
  TapSet t;
  t.n_taps = cfg.num_taps;
  t.n_tx = cfg.n_tx;
  t.n_rx = cfg.n_rx;
  t.n_c = cfg.n_subcarriers;
  t.n_l = cfg.n_symbols;
  t.doppler_hz = cfg.max_doppler_hz();
  t.symbol_duration_s = cfg.symbol_duration_s();
  t.subcarrier_spacing_hz = cfg.subcarrier_spacing_hz;

  // exponential PDP over taps spaced at half the RMS delay spread
  t.delay_s.resize(static_cast<size_t>(t.n_taps));
  t.power.resize(static_cast<size_t>(t.n_taps));
  double psum = 0.0;
  for (int n = 0; n < t.n_taps; ++n) {
    t.delay_s[static_cast<size_t>(n)] = n * 0.5 * cfg.delay_spread_s;
    const double p = cfg.delay_spread_s > 0
                         ? std::exp(-t.delay_s[static_cast<size_t>(n)] / cfg.delay_spread_s)
                         : (n == 0 ? 1.0 : 0.0);
    t.power[static_cast<size_t>(n)] = p;
    psum += p;
  }
  for (auto& p : t.power) p /= psum;

  Rng rng_angle(derive_seed(seed, seed_tag::kTapAngle));
  Rng rng_ue(derive_seed(seed, seed_tag::kTapUeGain));
  Rng rng_dop(derive_seed(seed, seed_tag::kTapDoppler));
  t.steer.resize(static_cast<size_t>(t.n_taps));
  t.ue_gain.resize(static_cast<size_t>(t.n_taps));
  t.sos_freq.resize(static_cast<size_t>(t.n_taps));
  t.sos_phase.resize(static_cast<size_t>(t.n_taps));
  for (int n = 0; n < t.n_taps; ++n) {
    const double theta = rng_angle.uniform(-std::numbers::pi / 2, std::numbers::pi / 2);
    auto& a = t.steer[static_cast<size_t>(n)];
    a.resize(static_cast<size_t>(cfg.n_tx));
    for (int b = 0; b < cfg.n_tx; ++b) {
      const double arg = std::numbers::pi * b * std::sin(theta);  // half-wavelength ULA
      a[static_cast<size_t>(b)] = {std::cos(arg), std::sin(arg)};
    }
    auto& u = t.ue_gain[static_cast<size_t>(n)];
    u.resize(static_cast<size_t>(cfg.n_rx));
    for (int r = 0; r < cfg.n_rx; ++r) u[static_cast<size_t>(r)] = rng_ue.cgaussian();
    auto& fr = t.sos_freq[static_cast<size_t>(n)];
    auto& ph = t.sos_phase[static_cast<size_t>(n)];
    fr.resize(kSinusoidsPerTap);
    ph.resize(kSinusoidsPerTap);
    for (int m = 0; m < kSinusoidsPerTap; ++m) {
      const double alpha = rng_dop.uniform(0.0, 2.0 * std::numbers::pi);
      fr[static_cast<size_t>(m)] = 2.0 * std::numbers::pi * t.doppler_hz * std::cos(alpha);
      ph[static_cast<size_t>(m)] = rng_dop.uniform(0.0, 2.0 * std::numbers::pi);
    }
  }
  return t;
}

ChannelRealization generate_channel(const SimConfig& cfg, uint64_t seed) {
  auto taps = std::make_shared<TapSet>(make_taps(cfg, seed));
  const TapSet& t = *taps;
  ChannelRealization ch;
  ch.doppler_hz = t.doppler_hz;
  ch.seed = seed;
  ch.h = ComplexGrid({t.n_rx, t.n_tx, t.n_c, t.n_l});
  for (int n = 0; n < t.n_taps; ++n) {
    std::vector<std::complex<double>> ev(static_cast<size_t>(t.n_c)), cv(static_cast<size_t>(t.n_l));
    for (int i = 0; i < t.n_c; ++i) ev[static_cast<size_t>(i)] = t.freq_phase(n, i);
    for (int l = 0; l < t.n_l; ++l) cv[static_cast<size_t>(l)] = t.time_gain(n, l);
    const double w = std::sqrt(t.power[static_cast<size_t>(n)]);
    for (int r = 0; r < t.n_rx; ++r) {
      const std::complex<double> ur = w * t.ue_gain[static_cast<size_t>(n)][static_cast<size_t>(r)];
      for (int b = 0; b < t.n_tx; ++b) {
        const std::complex<double> ub = ur * t.steer[static_cast<size_t>(n)][static_cast<size_t>(b)];
        for (int i = 0; i < t.n_c; ++i) {
          const std::complex<double> ubi = ub * ev[static_cast<size_t>(i)];
          for (int l = 0; l < t.n_l; ++l)
            ch.h.at(r, b, i, l) += std::complex<float>(ubi * cv[static_cast<size_t>(l)]);
        }
      }
    }
  }
  ch.taps = taps;
  return ch;
}

ComplexGrid svd_precode(const ChannelRealization& ch, int n_streams) {
  if (ch.taps) return precode_from_taps(*ch.taps, n_streams);
  return top_eigenvectors(grid_covariance(ch.h), n_streams);
}

ComplexGrid precode_from_taps(const TapSet& taps, int n_streams) {
  if (n_streams < 1 || n_streams > std::min(taps.n_tx, taps.n_rx))
    throw std::invalid_argument("precode: invalid stream count");
  return top_eigenvectors(wideband_covariance(taps), n_streams);
}

ComplexGrid equivalent_channel(const ChannelRealization& ch, const ComplexGrid& p) {
  const ComplexGrid& h = ch.h;
  if (h.rank() != 4 || p.rank() != 2 || p.dim(0) != h.dim(1))
    throw std::invalid_argument("equivalent_channel: shape mismatch H " + shape_str(h.shape) +
                                " P " + shape_str(p.shape));
  const int n_rx = h.dim(0), n_tx = h.dim(1), n_c = h.dim(2), n_l = h.dim(3);
  const int n_s = p.dim(1);
  ComplexGrid g({n_rx, n_s, n_c, n_l});
  for (int r = 0; r < n_rx; ++r)
    for (int s = 0; s < n_s; ++s)
      for (int i = 0; i < n_c; ++i)
        for (int l = 0; l < n_l; ++l) {
          std::complex<double> acc = 0.0;
          for (int b = 0; b < n_tx; ++b)
            acc += std::complex<double>(h.at(r, b, i, l)) * std::complex<double>(p.at(b, s));
          g.at(r, s, i, l) = std::complex<float>(acc);
        }
  return g;
}

ComplexGrid equivalent_from_taps(const TapSet& t, const ComplexGrid& p) {
  if (p.rank() != 2 || p.dim(0) != t.n_tx)
    throw std::invalid_argument("equivalent_from_taps: precoder shape mismatch");
  const int n_s = p.dim(1);
  ComplexGrid g({t.n_rx, n_s, t.n_c, t.n_l});
  // steer[n]^T P, per tap and stream
  std::vector<std::complex<double>> sp(static_cast<size_t>(t.n_taps) * n_s);
  for (int n = 0; n < t.n_taps; ++n)
    for (int s = 0; s < n_s; ++s) {
      std::complex<double> acc = 0.0;
      for (int b = 0; b < t.n_tx; ++b)
        acc += t.steer[static_cast<size_t>(n)][static_cast<size_t>(b)] *
               std::complex<double>(p.at(b, s));
      sp[static_cast<size_t>(n) * n_s + s] = acc;
    }
  // per-tap separable factors
  for (int n = 0; n < t.n_taps; ++n) {
    std::vector<std::complex<double>> ev(static_cast<size_t>(t.n_c)), cv(static_cast<size_t>(t.n_l));
    for (int i = 0; i < t.n_c; ++i) ev[static_cast<size_t>(i)] = t.freq_phase(n, i);
    for (int l = 0; l < t.n_l; ++l) cv[static_cast<size_t>(l)] = t.time_gain(n, l);
    const double w = std::sqrt(t.power[static_cast<size_t>(n)]);
    for (int r = 0; r < t.n_rx; ++r) {
      const std::complex<double> ur = t.ue_gain[static_cast<size_t>(n)][static_cast<size_t>(r)];
      for (int s = 0; s < n_s; ++s) {
        const std::complex<double> base = w * ur * sp[static_cast<size_t>(n) * n_s + s];
        for (int i = 0; i < t.n_c; ++i) {
          const std::complex<double> bi = base * ev[static_cast<size_t>(i)];
          for (int l = 0; l < t.n_l; ++l)
            g.at(r, s, i, l) += std::complex<float>(bi * cv[static_cast<size_t>(l)]);
        }
      }
    }
  }
  return g;
}

}  // namespace bimce
