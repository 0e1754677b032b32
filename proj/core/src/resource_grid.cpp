#include "bimce/resource_grid.hpp"

#include <cmath>
#include <stdexcept>

#include "bimce/rng.hpp"

namespace bimce {

namespace {

// Fixed master seed of the pilot QPSK sequence; patterns with the same
// dimensions always carry the same pilots.
constexpr uint64_t kPilotSequenceSeed = 0x42494d434531ull;

std::complex<float> noise_sample(uint64_t seed, int64_t element_index, double sigma_z_sq) {
  Rng rng(derive_seed(seed, seed_tag::kNoise, static_cast<uint64_t>(element_index)));
  double a, b;
  rng.gaussian_pair(a, b);
  const double s = std::sqrt(sigma_z_sq / 2.0);
  return {static_cast<float>(a * s), static_cast<float>(b * s)};
}

}  // namespace

std::complex<float> qpsk_map(uint8_t b0, uint8_t b1) {
  const float a = static_cast<float>(1 - 2 * static_cast<int>(b0));
  const float b = static_cast<float>(1 - 2 * static_cast<int>(b1));
  const float s = 0.70710678118654752440f;
  return {a * s, b * s};
}

PilotPattern make_pilot_pattern(const SimConfig& cfg, int n_freq_pilots,
                                const std::vector<int>& symbol_indices) {
  cfg.validate();
  if (n_freq_pilots < 1 || n_freq_pilots > cfg.n_subcarriers)
    throw std::invalid_argument("pilot pattern: n_freq_pilots out of range [1, n_subcarriers]");
  if (symbol_indices.empty()) throw std::invalid_argument("pilot pattern: no pilot symbols");
  PilotPattern pat;
  pat.subcarrier_indices.resize(static_cast<size_t>(n_freq_pilots));
  for (int k = 0; k < n_freq_pilots; ++k)
    pat.subcarrier_indices[static_cast<size_t>(k)] =
        static_cast<int>((static_cast<int64_t>(k) * cfg.n_subcarriers) / n_freq_pilots);
  for (size_t k = 1; k < pat.subcarrier_indices.size(); ++k)
    if (pat.subcarrier_indices[k] == pat.subcarrier_indices[k - 1])
      throw std::invalid_argument("pilot pattern: duplicate subcarrier index");
  int prev = -1;
  for (int s : symbol_indices) {
    if (s < 0 || s >= cfg.n_symbols)
      throw std::invalid_argument("pilot pattern: symbol index " + std::to_string(s) +
                                  " outside [0, n_symbols)");
    if (s <= prev) throw std::invalid_argument("pilot pattern: symbol indices must be ascending");
    prev = s;
  }
  pat.symbol_indices = symbol_indices;

  pat.x_p = ComplexGrid({cfg.n_streams, n_freq_pilots, static_cast<int>(symbol_indices.size())});
  Rng rng(derive_seed(kPilotSequenceSeed, seed_tag::kPilotSeq));
  for (int s = 0; s < cfg.n_streams; ++s)
    for (int a = 0; a < n_freq_pilots; ++a)
      for (int b = 0; b < pat.n_lp(); ++b) {
        const uint64_t bitsval = rng.next_u64();
        pat.x_p.at(s, a, b) = qpsk_map(bitsval & 1u, (bitsval >> 1) & 1u);
      }
  return pat;
}

int64_t data_re_count(const SimConfig& cfg, const PilotPattern& pattern) {
  return static_cast<int64_t>(cfg.n_subcarriers) * cfg.n_symbols -
         static_cast<int64_t>(pattern.n_cp()) * pattern.n_lp();
}

ResourceGrid build_grid(const std::vector<uint8_t>& bits, const PilotPattern& pattern,
                        const SimConfig& cfg) {
  const int64_t r = data_re_count(cfg, pattern);
  const int m = 2;  // QPSK
  const int64_t want = static_cast<int64_t>(cfg.n_streams) * r * m;
  if (static_cast<int64_t>(bits.size()) != want)
    throw std::invalid_argument("build_grid: bit count " + std::to_string(bits.size()) +
                                " does not match n_streams*R*M = " + std::to_string(want));
  ResourceGrid grid;
  grid.bits = bits;
  grid.bits_per_symbol = m;
  grid.x = ComplexGrid({cfg.n_streams, cfg.n_subcarriers, cfg.n_symbols});
  grid.data_mask = NdArray<uint8_t>({cfg.n_subcarriers, cfg.n_symbols}, 1);
  for (size_t a = 0; a < pattern.subcarrier_indices.size(); ++a)
    for (size_t b = 0; b < pattern.symbol_indices.size(); ++b)
      grid.data_mask.at(pattern.subcarrier_indices[a], pattern.symbol_indices[b]) = 0;

  size_t bit_pos = 0;
  for (int s = 0; s < cfg.n_streams; ++s) {
    for (int i = 0; i < cfg.n_subcarriers; ++i)
      for (int l = 0; l < cfg.n_symbols; ++l) {
        if (grid.data_mask.at(i, l)) {
          grid.x.at(s, i, l) = qpsk_map(bits[bit_pos], bits[bit_pos + 1]);
          bit_pos += 2;
        }
      }
  }
  for (int s = 0; s < cfg.n_streams; ++s)
    for (size_t a = 0; a < pattern.subcarrier_indices.size(); ++a)
      for (size_t b = 0; b < pattern.symbol_indices.size(); ++b)
        grid.x.at(s, pattern.subcarrier_indices[a], pattern.symbol_indices[b]) =
            pattern.x_p.at(s, static_cast<int>(a), static_cast<int>(b));
  return grid;
}

double ebno_to_noise_var(double ebno_db, int bits_per_symbol) {
  if (bits_per_symbol < 1) throw std::invalid_argument("ebno_to_noise_var: bits_per_symbol < 1");
  return 1.0 / (bits_per_symbol * std::pow(10.0, ebno_db / 10.0));
}

TransmitResult transmit(const ChannelRealization& ch, const ComplexGrid& p,
                        const ResourceGrid& grid, const PilotPattern& pattern,
                        double sigma_z_sq, uint64_t seed) {
  if (sigma_z_sq < 0) throw std::invalid_argument("transmit: negative noise variance");
  const ComplexGrid g = ch.taps ? equivalent_from_taps(*ch.taps, p) : equivalent_channel(ch, p);
  const int n_rx = g.dim(0), n_s = g.dim(1), n_c = g.dim(2), n_l = g.dim(3);
  if (grid.x.dim(0) != n_s || grid.x.dim(1) != n_c || grid.x.dim(2) != n_l)
    throw std::invalid_argument("transmit: grid shape mismatch");
  TransmitResult out;
  out.y = ComplexGrid({n_rx, n_c, n_l});
  for (int r = 0; r < n_rx; ++r)
    for (int i = 0; i < n_c; ++i)
      for (int l = 0; l < n_l; ++l) {
        std::complex<float> acc = 0.0f;
        for (int s = 0; s < n_s; ++s) acc += g.at(r, s, i, l) * grid.x.at(s, i, l);
        if (sigma_z_sq > 0) {
          const int64_t idx = (static_cast<int64_t>(r) * n_c + i) * n_l + l;
          acc += noise_sample(seed, idx, sigma_z_sq);
        }
        out.y.at(r, i, l) = acc;
      }
  out.y_p = ComplexGrid({n_rx, pattern.n_cp(), pattern.n_lp()});
  for (int r = 0; r < n_rx; ++r)
    for (int a = 0; a < pattern.n_cp(); ++a)
      for (int b = 0; b < pattern.n_lp(); ++b)
        out.y_p.at(r, a, b) =
            out.y.at(r, pattern.subcarrier_indices[static_cast<size_t>(a)],
                     pattern.symbol_indices[static_cast<size_t>(b)]);
  return out;
}

ComplexGrid received_pilots(const ComplexGrid& g, const PilotPattern& pattern,
                            double sigma_z_sq, uint64_t seed) {
  if (sigma_z_sq < 0) throw std::invalid_argument("received_pilots: negative noise variance");
  const int n_rx = g.dim(0), n_s = g.dim(1), n_c = g.dim(2), n_l = g.dim(3);
  ComplexGrid y_p({n_rx, pattern.n_cp(), pattern.n_lp()});
  for (int r = 0; r < n_rx; ++r)
    for (int a = 0; a < pattern.n_cp(); ++a)
      for (int b = 0; b < pattern.n_lp(); ++b) {
        const int i = pattern.subcarrier_indices[static_cast<size_t>(a)];
        const int l = pattern.symbol_indices[static_cast<size_t>(b)];
        std::complex<float> acc = 0.0f;
        for (int s = 0; s < n_s; ++s) acc += g.at(r, s, i, l) * pattern.x_p.at(s, a, b);
        if (sigma_z_sq > 0) {
          const int64_t idx = (static_cast<int64_t>(r) * n_c + i) * n_l + l;
          acc += noise_sample(seed, idx, sigma_z_sq);
        }
        y_p.at(r, a, b) = acc;
      }
  return y_p;
}

}  // namespace bimce
