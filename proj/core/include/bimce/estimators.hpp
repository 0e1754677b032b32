#pragma once

#include <functional>
#include <span>
#include <vector>

#include "bimce/array.hpp"
#include "bimce/resource_grid.hpp"

namespace bimce {

/// Per-pilot-position channel estimate with the pattern it came from.
struct PilotEstimate {
  ComplexGrid g_p_hat;  // [n_rx, n_s, n_cp, n_lp]
  PilotPattern pattern;
};

/// Least-squares estimate: elementwise division of the received pilots
/// by the known pilot symbols, per receive antenna and stream.
PilotEstimate ls_estimate(const ComplexGrid& y_p, const PilotPattern& pattern);

/// Per-receive-antenna SNR. mu is linear, mu_db = 10 log10(mu); the LS
/// MSE at antenna i equals 1/mu[i].
struct BeliefVector {
  std::vector<float> mu;
  std::vector<float> mu_db;
};

BeliefVector compute_belief(double sigma_z_sq, std::span<const double> signal_power);

/// Genie belief: noise variance from the simulator, per-antenna signal
/// power measured from the true equivalent channel over the slot.
BeliefVector genie_belief(const ComplexGrid& g, double sigma_z_sq);

enum class InterpMode { kNearest, kLinear };

struct InterpolationResult {
  ComplexGrid grid;  // [n_rx, n_s, n_c, n_l]
  /// Linear mode degraded to nearest in a dimension with one pilot.
  bool linear_fallback_freq = false;
  bool linear_fallback_time = false;
};

/// Separable interpolation, frequency first then time. Nearest breaks
/// ties toward the lower index; linear extends the boundary segments.
InterpolationResult interpolate(const PilotEstimate& est, InterpMode mode, int n_c, int n_l);

/// Second-order statistics of the vectorized equivalent channel over the
/// (n_c, n_l) grid. Hermitian by construction, positive definite after
/// diagonal loading.
struct CovarianceModel {
  int n_c = 0, n_l = 0;  // grid the statistics were estimated on
  int dim = 0;           // n_c * n_l
  int64_t sample_count = 0;
  float epsilon = 1e-4f;
  std::vector<std::complex<float>> mean;  // [dim]
  std::vector<std::complex<float>> r_gg;  // [dim * dim], row-major
};

/// Empirical mean-removed covariance; every (sample, antenna, stream)
/// slice is one observation. Diagonal loading is epsilon times the mean
/// diagonal power.
CovarianceModel estimate_covariance(std::span<const ComplexGrid> samples, float epsilon);

/// Streaming variant for large calibration sets; gen(i) must return the
/// i-th calibration grid and be safe to call from multiple threads.
CovarianceModel estimate_covariance_stream(const std::function<ComplexGrid(int)>& gen, int count,
                                           float epsilon, int threads = 1);

/// Joint 2-D LMMSE fill-in from pilot positions, applied per receive
/// antenna and stream on the vectorized grid.
ComplexGrid lmmse_interpolate(const PilotEstimate& est, const CovarianceModel& cov,
                              double sigma_z_sq);

struct Nmse {
  double linear = 0.0;
  double db = 0.0;
};

/// sum|G - Ghat|^2 / sum|G|^2 with a -100 dB floor on the dB value.
Nmse nmse(const ComplexGrid& g_true, const ComplexGrid& g_hat);

/// Pooled-ratio helper used by batch evaluation.
Nmse nmse_from_sums(double err_sum, double ref_sum);

}  // namespace bimce
