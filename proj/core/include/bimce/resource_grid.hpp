#pragma once

#include <cstdint>
#include <vector>

#include "bimce/array.hpp"
#include "bimce/channel.hpp"

namespace bimce {

/// Pilot placement plus the known pilot symbols. Frequency indices are
/// the even-stride rule floor(k * n_c / n_cp); time indices default to
/// OFDM symbols {2, 11}. Pilot symbols are a fixed unit-modulus QPSK
/// sequence independent of the experiment seed.
struct PilotPattern {
  std::vector<int> subcarrier_indices;  // sorted, size n_cp
  std::vector<int> symbol_indices;      // sorted, size n_lp
  ComplexGrid x_p;                      // [n_s, n_cp, n_lp]

  int n_cp() const { return static_cast<int>(subcarrier_indices.size()); }
  int n_lp() const { return static_cast<int>(symbol_indices.size()); }
};

PilotPattern make_pilot_pattern(const SimConfig& cfg, int n_freq_pilots,
                                const std::vector<int>& symbol_indices);

/// Full slot content: pilots at pattern positions, Gray-mapped QPSK data
/// elsewhere. Unit symbol energy throughout.
struct ResourceGrid {
  ComplexGrid x;               // [n_s, n_c, n_l]
  NdArray<uint8_t> data_mask;  // [n_c, n_l]; 1 where data is mapped
  std::vector<uint8_t> bits;   // payload, n_s * R * bits_per_symbol
  int bits_per_symbol = 2;
};

/// Number of data resource elements per stream for a pattern.
int64_t data_re_count(const SimConfig& cfg, const PilotPattern& pattern);

ResourceGrid build_grid(const std::vector<uint8_t>& bits, const PilotPattern& pattern,
                        const SimConfig& cfg);

/// Unit-energy QPSK Gray map: (b0, b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt(2).
std::complex<float> qpsk_map(uint8_t b0, uint8_t b1);

/// With unit symbol energy: sigma_z^2 = 1 / (bits_per_symbol * 10^(EbNo/10)).
double ebno_to_noise_var(double ebno_db, int bits_per_symbol);

struct TransmitResult {
  ComplexGrid y;    // [n_rx, n_c, n_l]
  ComplexGrid y_p;  // [n_rx, n_cp, n_lp]
};

/// Y = (HP) X + Z with circularly-symmetric complex Gaussian noise of
/// total variance sigma_z_sq per element. Noise is derived per resource
/// element from (seed, element index), so the pilot-only fast path below
/// produces bit-identical pilot observations.
TransmitResult transmit(const ChannelRealization& ch, const ComplexGrid& p,
                        const ResourceGrid& grid, const PilotPattern& pattern,
                        double sigma_z_sq, uint64_t seed);

/// Pilot positions only, from an already-precoded channel G.
ComplexGrid received_pilots(const ComplexGrid& g, const PilotPattern& pattern,
                            double sigma_z_sq, uint64_t seed);

}  // namespace bimce
