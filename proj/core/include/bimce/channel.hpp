#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <vector>

#include "bimce/array.hpp"

namespace bimce {

inline constexpr double kSpeedOfLightMps = 299792458.0;

/// Link-level configuration. Defaults are the 2.6 GHz / 32x8 downlink
/// setup used throughout the experiments.
struct SimConfig {
  double carrier_frequency_hz = 2.6e9;
  double subcarrier_spacing_hz = 15e3;
  int n_tx = 32;
  int n_rx = 8;
  int n_streams = 1;
  int n_subcarriers = 48;
  int n_symbols = 14;
  double ue_speed_mps = 20.0;
  int num_taps = 8;
  double delay_spread_s = 300e-9;
  uint64_t seed = 1;

  double max_doppler_hz() const { return ue_speed_mps * carrier_frequency_hz / kSpeedOfLightMps; }
  double symbol_duration_s() const { return 1.0 / subcarrier_spacing_hz; }
  void validate() const;  // throws std::invalid_argument naming the offending field
};

/// Clustered tapped-delay-line parameters of one channel realization:
/// exponential power-delay profile, per-tap BS-side ULA steering vector
/// at a random angle, independent UE-side gains, and a Jakes
/// sum-of-sinusoids process for time evolution.
struct TapSet {
  int n_taps = 0;
  int n_tx = 0, n_rx = 0, n_c = 0, n_l = 0;
  double doppler_hz = 0.0;
  double symbol_duration_s = 0.0;
  double subcarrier_spacing_hz = 0.0;
  std::vector<double> delay_s;  // per tap
  std::vector<double> power;    // per tap, sums to 1
  std::vector<std::vector<std::complex<double>>> steer;    // [tap][n_tx], unit modulus
  std::vector<std::vector<std::complex<double>>> ue_gain;  // [tap][n_rx], CN(0,1)
  std::vector<std::vector<double>> sos_freq;   // [tap][m], rad/s
  std::vector<std::vector<double>> sos_phase;  // [tap][m]

  /// Jakes fading coefficient of one tap at OFDM symbol l; E|c|^2 = 1.
  std::complex<double> time_gain(int tap, int l) const;
  /// exp(-j 2 pi f_i tau) at subcarrier i (band-centered frequencies).
  std::complex<double> freq_phase(int tap, int i) const;
};

struct ChannelRealization {
  ComplexGrid h;  // [n_rx, n_tx, n_c, n_l]
  double doppler_hz = 0.0;
  uint64_t seed = 0;
  /// Present when generated by generate_channel(); enables the exact
  /// low-rank fast paths for precoding and G = HP.
  std::shared_ptr<const TapSet> taps;
};

TapSet make_taps(const SimConfig& cfg, uint64_t seed);

/// Materializes the frequency response H over the full grid (DFT over
/// taps); average coefficient power is 1 by construction.
ChannelRealization generate_channel(const SimConfig& cfg, uint64_t seed);

/// Wideband precoder: top n_streams eigenvectors of the
/// subcarrier/symbol-averaged channel covariance (equivalently the top
/// right singular vectors of the stacked channel). Columns have unit
/// norm and the first non-negligible entry is phase-rotated to the
/// positive real axis so repeated calls are identical.
ComplexGrid svd_precode(const ChannelRealization& ch, int n_streams);

/// Same computation from the tap decomposition (no grid required).
ComplexGrid precode_from_taps(const TapSet& taps, int n_streams);

/// G = H P per resource element: [n_rx, n_s, n_c, n_l].
ComplexGrid equivalent_channel(const ChannelRealization& ch, const ComplexGrid& p);
ComplexGrid equivalent_from_taps(const TapSet& taps, const ComplexGrid& p);

}  // namespace bimce
