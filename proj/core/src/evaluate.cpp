#include "bimce/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <thread>

#include "bimce/rng.hpp"

namespace bimce {

EstimatorRef EstimatorRef::classical(const std::string& id) {
  EstimatorRef ref;
  ref.name = id;
  if (id == "genie")
    ref.kind = Kind::kGenie;
  else if (id == "ls_nearest")
    ref.kind = Kind::kLsNearest;
  else if (id == "ls_linear")
    ref.kind = Kind::kLsLinear;
  else
    throw std::invalid_argument("unknown classical estimator '" + id +
                                "' (genie|ls_nearest|ls_linear|ls_lmmse)");
  return ref;
}

EstimatorRef EstimatorRef::lmmse(const CovarianceModel& cov) {
  EstimatorRef ref;
  ref.kind = Kind::kLsLmmse;
  ref.name = "ls_lmmse";
  ref.cov = &cov;
  return ref;
}

EstimatorRef EstimatorRef::learned(const std::string& label, Model& m) {
  EstimatorRef ref;
  ref.kind = Kind::kModel;
  ref.name = label;
  ref.model = &m;
  return ref;
}

std::vector<Sample> make_test_set(const SimConfig& cfg, const PilotPattern& pattern,
                                  double ebno_db, int n_slots, uint64_t master_seed,
                                  int threads) {
  GenSpec spec;
  spec.count = n_slots;
  spec.split = Split::kTest;
  spec.fixed_ebno_db = ebno_db;
  return generate_dataset(cfg, pattern, spec, master_seed, threads).samples;
}

namespace {

void slot_sums_complex(const ComplexGrid& truth, const ComplexGrid& hat, double& err,
                       double& ref) {
  for (int64_t i = 0; i < truth.numel(); ++i) {
    err += std::norm(std::complex<double>(truth.v[(size_t)i]) -
                     std::complex<double>(hat.v[(size_t)i]));
    ref += std::norm(std::complex<double>(truth.v[(size_t)i]));
  }
}

SlotSums eval_classical(std::span<const Sample> samples, const PilotPattern& pattern,
                        const EstimatorRef& est) {
  SlotSums sums(samples.size());
  const int n_c = samples[0].g_true.dim(2), n_l = samples[0].g_true.dim(3);
  for (size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    double err = 0.0, ref = 0.0;
    switch (est.kind) {
      case EstimatorRef::Kind::kGenie:
        slot_sums_complex(s.g_true, s.g_true, err, ref);
        break;
      case EstimatorRef::Kind::kLsNearest:
      case EstimatorRef::Kind::kLsLinear: {
        PilotEstimate pe{s.g_ls_p, pattern};
        const InterpolationResult res =
            interpolate(pe, est.kind == EstimatorRef::Kind::kLsNearest ? InterpMode::kNearest
                                                                       : InterpMode::kLinear,
                        n_c, n_l);
        slot_sums_complex(s.g_true, res.grid, err, ref);
        break;
      }
      case EstimatorRef::Kind::kLsLmmse: {
        PilotEstimate pe{s.g_ls_p, pattern};
        const double sigma = ebno_to_noise_var(s.ebno_db, 2);
        const ComplexGrid hat = lmmse_interpolate(pe, *est.cov, sigma);
        slot_sums_complex(s.g_true, hat, err, ref);
        break;
      }
      case EstimatorRef::Kind::kModel:
        break;  // handled elsewhere
    }
    sums[i] = {err, ref};
  }
  return sums;
}

SlotSums eval_model(std::span<const Sample> samples, const EstimatorRef& est) {
  SlotSums sums(samples.size());
  const int batch = 256;
  Tensor planes, belief, target;
  std::vector<int> idx;
  for (size_t at = 0; at < samples.size(); at += batch) {
    const int bn = static_cast<int>(std::min<size_t>(batch, samples.size() - at));
    idx.resize(static_cast<size_t>(bn));
    std::iota(idx.begin(), idx.end(), static_cast<int>(at));
    fill_planes(samples, idx, planes, belief);
    fill_targets(samples, idx, target);
    const Tensor pred = est.model->predict(planes, belief);
    const int64_t per = pred.numel() / bn;
    for (int b = 0; b < bn; ++b) {
      double err = 0.0, ref = 0.0;
      const float* pp = pred.data() + b * per;
      const float* tp = target.data() + b * per;
      for (int64_t j = 0; j < per; ++j) {
        const double d = static_cast<double>(pp[j]) - tp[j];
        err += d * d;
        ref += static_cast<double>(tp[j]) * tp[j];
      }
      sums[at + static_cast<size_t>(b)] = {err, ref};
    }
  }
  return sums;
}

}  // namespace

EvalPoint summarize_slots(const SlotSums& sums, double ebno_db, uint64_t bootstrap_seed,
                          int resamples) {
  double err = 0.0, ref = 0.0;
  for (const auto& [e, r] : sums) {
    err += e;
    ref += r;
  }
  EvalPoint pt;
  pt.ebno_db = ebno_db;
  pt.n_slots = static_cast<int>(sums.size());
  const Nmse pooled = nmse_from_sums(err, ref);
  pt.nmse_linear = pooled.linear;
  pt.nmse_db = pooled.db;

  // bootstrap the pooled ratio over slots
  std::vector<double> stats(static_cast<size_t>(resamples));
  Rng rng(derive_seed(bootstrap_seed, seed_tag::kBootstrap));
  const size_t n = sums.size();
  for (int b = 0; b < resamples; ++b) {
    double be = 0.0, br = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const auto& [e, r] = sums[rng.next_below(n)];
      be += e;
      br += r;
    }
    stats[static_cast<size_t>(b)] = nmse_from_sums(be, br).db;
  }
  std::sort(stats.begin(), stats.end());
  const auto pick = [&](double q) {
    const size_t i = static_cast<size_t>(q * (stats.size() - 1));
    return stats[i];
  };
  pt.ci_lo_db = pick(0.025);
  pt.ci_hi_db = pick(0.975);
  return pt;
}

EvalPoint evaluate_on(std::span<const Sample> samples, const PilotPattern& pattern,
                      const EstimatorRef& est, double ebno_db, SlotSums* per_slot) {
  if (samples.empty()) throw std::invalid_argument("evaluate_on: empty test set");
  const auto t0 = std::chrono::steady_clock::now();
  SlotSums sums = est.kind == EstimatorRef::Kind::kModel ? eval_model(samples, est)
                                                         : eval_classical(samples, pattern, est);
  EvalPoint pt = summarize_slots(sums, ebno_db);
  pt.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (per_slot) *per_slot = std::move(sums);
  return pt;
}

std::string result_csv_header() {
  return "estimator,pilots,ebno_db,nmse_db,nmse_ci_lo,nmse_ci_hi,params,flops,seconds";
}

std::string to_csv_line(const ResultRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%d,%g,%.4f,%.4f,%.4f,%lld,%lld,%.3f",
                row.estimator.c_str(), row.pilots, row.ebno_db, row.nmse_db, row.ci_lo_db,
                row.ci_hi_db, static_cast<long long>(row.params),
                static_cast<long long>(row.flops), row.seconds);
  return buf;
}

void write_result_csv(const std::string& path, std::span<const ResultRow> rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("results: cannot open '" + path + "' for writing");
  out << result_csv_header() << '\n';
  for (const ResultRow& r : rows) out << to_csv_line(r) << '\n';
  if (!out) throw std::runtime_error("results: short write to '" + path + "'");
}

}  // namespace bimce
