#include "bimce/estimators.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace bimce {

namespace {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

/// 1-D interpolation of complex rows sampled at integer positions.
/// Writes n_out values; positions must be ascending.
void interp_row(const std::vector<int>& pos, const std::complex<float>* in, int stride_in,
                std::complex<float>* out, int stride_out, int n_out, InterpMode mode,
                bool degrade_to_nearest) {
  const int np = static_cast<int>(pos.size());
  auto value = [&](int k) { return in[static_cast<int64_t>(k) * stride_in]; };
  if (mode == InterpMode::kNearest || degrade_to_nearest || np == 1) {
    int k = 0;
    for (int q = 0; q < n_out; ++q) {
      while (k + 1 < np) {
        // advance while the next pilot is strictly closer; ties keep the
        // lower index
        const int d_cur = std::abs(q - pos[static_cast<size_t>(k)]);
        const int d_next = std::abs(q - pos[static_cast<size_t>(k + 1)]);
        if (d_next < d_cur)
          ++k;
        else
          break;
      }
      out[static_cast<int64_t>(q) * stride_out] = value(k);
    }
    return;
  }
  // linear with boundary-segment extension
  int k = 0;
  for (int q = 0; q < n_out; ++q) {
    while (k + 2 < np && q >= pos[static_cast<size_t>(k + 1)]) ++k;
    const int x0 = pos[static_cast<size_t>(k)];
    const int x1 = pos[static_cast<size_t>(k + 1)];
    const float t = static_cast<float>(q - x0) / static_cast<float>(x1 - x0);
    const std::complex<float> v0 = value(k), v1 = value(k + 1);
    out[static_cast<int64_t>(q) * stride_out] = v0 + t * (v1 - v0);
  }
}

}  // namespace

PilotEstimate ls_estimate(const ComplexGrid& y_p, const PilotPattern& pattern) {
  const int n_rx = y_p.dim(0);
  const int n_cp = pattern.n_cp(), n_lp = pattern.n_lp();
  if (y_p.rank() != 3 || y_p.dim(1) != n_cp || y_p.dim(2) != n_lp)
    throw std::invalid_argument("ls_estimate: Y_p shape " + shape_str(y_p.shape) +
                                " does not match the pattern");
  const int n_s = pattern.x_p.dim(0);
  for (const auto& xp : pattern.x_p.v)
    if (std::abs(xp) < 1e-12f)
      throw std::invalid_argument("ls_estimate: degenerate pilot symbol with |X_p| < 1e-12");
  PilotEstimate est;
  est.pattern = pattern;
  est.g_p_hat = ComplexGrid({n_rx, n_s, n_cp, n_lp});
  for (int r = 0; r < n_rx; ++r)
    for (int s = 0; s < n_s; ++s)
      for (int a = 0; a < n_cp; ++a)
        for (int b = 0; b < n_lp; ++b)
          est.g_p_hat.at(r, s, a, b) = y_p.at(r, a, b) / pattern.x_p.at(s, a, b);
  return est;
}

BeliefVector compute_belief(double sigma_z_sq, std::span<const double> signal_power) {
  if (!(sigma_z_sq > 0)) throw std::invalid_argument("compute_belief: sigma_z_sq must be positive");
  BeliefVector bv;
  bv.mu.reserve(signal_power.size());
  bv.mu_db.reserve(signal_power.size());
  for (double p : signal_power) {
    if (!(p > 0)) throw std::invalid_argument("compute_belief: nonpositive signal power");
    const double mu = p / sigma_z_sq;
    bv.mu.push_back(static_cast<float>(mu));
    bv.mu_db.push_back(static_cast<float>(10.0 * std::log10(mu)));
  }
  return bv;
}

BeliefVector genie_belief(const ComplexGrid& g, double sigma_z_sq) {
  const int n_rx = g.dim(0);
  const int64_t per_antenna = g.numel() / n_rx;
  std::vector<double> power(static_cast<size_t>(n_rx), 0.0);
  for (int r = 0; r < n_rx; ++r) {
    double acc = 0.0;
    const std::complex<float>* p = g.data() + static_cast<int64_t>(r) * per_antenna;
    for (int64_t i = 0; i < per_antenna; ++i) acc += std::norm(std::complex<double>(p[i]));
    power[static_cast<size_t>(r)] = acc / static_cast<double>(per_antenna);
  }
  return compute_belief(sigma_z_sq, power);
}

InterpolationResult interpolate(const PilotEstimate& est, InterpMode mode, int n_c, int n_l) {
  const PilotPattern& pat = est.pattern;
  const int n_rx = est.g_p_hat.dim(0), n_s = est.g_p_hat.dim(1);
  const int n_cp = pat.n_cp(), n_lp = pat.n_lp();
  if (n_cp < 1 || n_lp < 1) throw std::invalid_argument("interpolate: empty pilot pattern");
  InterpolationResult out;
  out.linear_fallback_freq = mode == InterpMode::kLinear && n_cp == 1;
  out.linear_fallback_time = mode == InterpMode::kLinear && n_lp == 1;
  out.grid = ComplexGrid({n_rx, n_s, n_c, n_l});

  // frequency pass at pilot symbols, then time pass over all subcarriers
  ComplexGrid freq({n_rx, n_s, n_c, n_lp});
  for (int r = 0; r < n_rx; ++r)
    for (int s = 0; s < n_s; ++s)
      for (int b = 0; b < n_lp; ++b)
        interp_row(pat.subcarrier_indices, &est.g_p_hat.at(r, s, 0, b), n_lp,
                   &freq.at(r, s, 0, b), n_lp, n_c, mode, out.linear_fallback_freq);
  for (int r = 0; r < n_rx; ++r)
    for (int s = 0; s < n_s; ++s)
      for (int i = 0; i < n_c; ++i)
        interp_row(pat.symbol_indices, &freq.at(r, s, i, 0), 1, &out.grid.at(r, s, i, 0), 1, n_l,
                   mode, out.linear_fallback_time);
  return out;
}

namespace {

CovarianceModel finalize_covariance(MatrixXcd& acc, VectorXcd& mean_acc, int64_t count,
                                    float epsilon, int n_c, int n_l) {
  if (count < 1) throw std::invalid_argument("estimate_covariance: zero samples");
  const int dim = static_cast<int>(acc.rows());
  mean_acc /= static_cast<double>(count);
  acc /= static_cast<double>(count);
  acc -= mean_acc * mean_acc.adjoint();
  // exact Hermitian by construction
  for (int i = 0; i < dim; ++i) {
    acc(i, i) = std::complex<double>(acc(i, i).real(), 0.0);
    for (int j = i + 1; j < dim; ++j) {
      const std::complex<double> avg = 0.5 * (acc(i, j) + std::conj(acc(j, i)));
      acc(i, j) = avg;
      acc(j, i) = std::conj(avg);
    }
  }
  double diag_mean = 0.0;
  for (int i = 0; i < dim; ++i) diag_mean += acc(i, i).real();
  diag_mean /= dim;
  // relative loading, with a unit-power fallback when the mean-removed
  // covariance is degenerate (e.g. duplicated samples)
  const double load = epsilon * (diag_mean > 1e-12 ? diag_mean : 1.0);
  for (int i = 0; i < dim; ++i) acc(i, i) += load;

  CovarianceModel cov;
  cov.n_c = n_c;
  cov.n_l = n_l;
  cov.dim = dim;
  cov.sample_count = count;
  cov.epsilon = epsilon;
  cov.mean.resize(static_cast<size_t>(dim));
  cov.r_gg.resize(static_cast<size_t>(dim) * dim);
  for (int i = 0; i < dim; ++i) {
    cov.mean[static_cast<size_t>(i)] = std::complex<float>(mean_acc(i));
    for (int j = 0; j < dim; ++j)
      cov.r_gg[static_cast<size_t>(i) * dim + j] = std::complex<float>(acc(i, j));
  }
  return cov;
}

void accumulate_grid(const ComplexGrid& g, MatrixXcd& acc, VectorXcd& mean_acc, int64_t& count) {
  const int n_rx = g.dim(0), n_s = g.dim(1);
  const int dim = g.dim(2) * g.dim(3);
  if (acc.rows() != dim) throw std::invalid_argument("estimate_covariance: grid dim mismatch");
  VectorXcd v(dim);
  for (int r = 0; r < n_rx; ++r)
    for (int s = 0; s < n_s; ++s) {
      const std::complex<float>* p = &g.at(r, s, 0, 0);
      for (int i = 0; i < dim; ++i) v(i) = std::complex<double>(p[i]);
      acc.noalias() += v * v.adjoint();
      mean_acc += v;
      ++count;
    }
}

}  // namespace

CovarianceModel estimate_covariance(std::span<const ComplexGrid> samples, float epsilon) {
  if (samples.empty()) throw std::invalid_argument("estimate_covariance: zero samples");
  const int dim = samples[0].dim(2) * samples[0].dim(3);
  MatrixXcd acc = MatrixXcd::Zero(dim, dim);
  VectorXcd mean_acc = VectorXcd::Zero(dim);
  int64_t count = 0;
  for (const ComplexGrid& g : samples) accumulate_grid(g, acc, mean_acc, count);
  return finalize_covariance(acc, mean_acc, count, epsilon, samples[0].dim(2), samples[0].dim(3));
}

CovarianceModel estimate_covariance_stream(const std::function<ComplexGrid(int)>& gen, int count,
                                           float epsilon, int threads) {
  if (count < 1) throw std::invalid_argument("estimate_covariance: zero samples");
  threads = std::max(1, threads);
  const ComplexGrid probe = gen(0);
  const int dim = probe.dim(2) * probe.dim(3);

  std::vector<MatrixXcd> accs(static_cast<size_t>(threads), MatrixXcd::Zero(dim, dim));
  std::vector<VectorXcd> means(static_cast<size_t>(threads), VectorXcd::Zero(dim));
  std::vector<int64_t> counts(static_cast<size_t>(threads), 0);
  auto worker = [&](int w) {
    for (int i = w; i < count; i += threads) {
      const ComplexGrid g = i == 0 ? probe : gen(i);
      accumulate_grid(g, accs[static_cast<size_t>(w)], means[static_cast<size_t>(w)],
                      counts[static_cast<size_t>(w)]);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& th : pool) th.join();
  }
  for (int w = 1; w < threads; ++w) {
    accs[0] += accs[static_cast<size_t>(w)];
    means[0] += means[static_cast<size_t>(w)];
    counts[0] += counts[static_cast<size_t>(w)];
  }
  return finalize_covariance(accs[0], means[0], counts[0], epsilon, probe.dim(2), probe.dim(3));
}

ComplexGrid lmmse_interpolate(const PilotEstimate& est, const CovarianceModel& cov,
                              double sigma_z_sq) {
  const PilotPattern& pat = est.pattern;
  const int n_rx = est.g_p_hat.dim(0), n_s = est.g_p_hat.dim(1);
  const int n_cp = pat.n_cp(), n_lp = pat.n_lp();
  const int np = n_cp * n_lp;
  const int dim = cov.dim;
  const int n_c = cov.n_c, n_l = cov.n_l;
  if (n_c * n_l != dim) throw std::invalid_argument("lmmse_interpolate: malformed covariance dims");
  if (sigma_z_sq < 0) throw std::invalid_argument("lmmse_interpolate: negative noise variance");

  std::vector<int> pidx(static_cast<size_t>(np));
  for (int a = 0; a < n_cp; ++a)
    for (int b = 0; b < n_lp; ++b)
      pidx[static_cast<size_t>(a) * n_lp + b] =
          pat.subcarrier_indices[static_cast<size_t>(a)] * n_l +
          pat.symbol_indices[static_cast<size_t>(b)];
  for (int q : pidx)
    if (q >= dim) throw std::invalid_argument("lmmse_interpolate: pattern exceeds covariance dims");

  MatrixXcd r_pp(np, np);
  MatrixXcd r_gp(dim, np);
  for (int i = 0; i < np; ++i) {
    for (int j = 0; j < np; ++j)
      r_pp(i, j) = std::complex<double>(
          cov.r_gg[static_cast<size_t>(pidx[static_cast<size_t>(i)]) * dim +
                   pidx[static_cast<size_t>(j)]]);
    r_pp(i, i) += sigma_z_sq;
  }
  for (int q = 0; q < dim; ++q)
    for (int j = 0; j < np; ++j)
      r_gp(q, j) = std::complex<double>(
          cov.r_gg[static_cast<size_t>(q) * dim + pidx[static_cast<size_t>(j)]]);

  Eigen::LDLT<MatrixXcd> ldlt(r_pp);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw std::runtime_error("lmmse_interpolate: pilot covariance not positive definite "
                             "(dim=" + std::to_string(np) +
                             ", epsilon=" + std::to_string(cov.epsilon) + ")");

  ComplexGrid out({n_rx, n_s, n_c, n_l});
  VectorXcd gp(np), rhs(np);
  for (int r = 0; r < n_rx; ++r)
    for (int s = 0; s < n_s; ++s) {
      for (int a = 0; a < n_cp; ++a)
        for (int b = 0; b < n_lp; ++b) {
          const int j = a * n_lp + b;
          gp(j) = std::complex<double>(est.g_p_hat.at(r, s, a, b)) -
                  std::complex<double>(cov.mean[static_cast<size_t>(pidx[static_cast<size_t>(j)])]);
        }
      rhs = ldlt.solve(gp);
      VectorXcd filled = r_gp * rhs;
      std::complex<float>* op = &out.at(r, s, 0, 0);
      for (int q = 0; q < dim; ++q)
        op[q] = std::complex<float>(filled(q) + std::complex<double>(cov.mean[static_cast<size_t>(q)]));
    }
  return out;
}

Nmse nmse_from_sums(double err_sum, double ref_sum) {
  if (!(ref_sum > 0)) throw std::invalid_argument("nmse: zero-norm reference");
  Nmse n;
  n.linear = err_sum / ref_sum;
  n.db = 10.0 * std::log10(std::max(n.linear, 1e-10));
  return n;
}

Nmse nmse(const ComplexGrid& g_true, const ComplexGrid& g_hat) {
  if (!g_true.same_shape(g_hat)) throw std::invalid_argument("nmse: shape mismatch");
  double err = 0.0, ref = 0.0;
  for (int64_t i = 0; i < g_true.numel(); ++i) {
    const std::complex<double> t(g_true.v[static_cast<size_t>(i)]);
    const std::complex<double> h(g_hat.v[static_cast<size_t>(i)]);
    err += std::norm(t - h);
    ref += std::norm(t);
  }
  return nmse_from_sums(err, ref);
}

}  // namespace bimce
