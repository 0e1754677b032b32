#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bimce/checkpoint.hpp"
#include "bimce/dataset.hpp"
#include "bimce/estimators.hpp"
#include "bimce/model.hpp"

namespace bimce {

/// What to run against a test set. Classical estimators are LS at the
/// pilots followed by the named expansion; "genie" copies the truth and
/// marks the NMSE floor.
struct EstimatorRef {
  enum class Kind { kGenie, kLsNearest, kLsLinear, kLsLmmse, kModel };
  Kind kind = Kind::kLsLinear;
  std::string name;                      // CSV label
  Model* model = nullptr;                // kModel
  const CovarianceModel* cov = nullptr;  // kLsLmmse

  static EstimatorRef classical(const std::string& id);  // genie|ls_nearest|ls_linear
  static EstimatorRef lmmse(const CovarianceModel& cov);
  static EstimatorRef learned(const std::string& label, Model& m);
};

struct EvalPoint {
  double ebno_db = 0.0;
  double nmse_linear = 0.0, nmse_db = 0.0;
  double ci_lo_db = 0.0, ci_hi_db = 0.0;  // bootstrap 95% on the pooled ratio
  int n_slots = 0;
  double seconds = 0.0;
};

/// Per-slot error/reference power pairs; kept for paired comparisons.
using SlotSums = std::vector<std::pair<double, double>>;

/// Shared test set for one EbNo point (same channels for every
/// estimator evaluated against it).
std::vector<Sample> make_test_set(const SimConfig& cfg, const PilotPattern& pattern,
                                  double ebno_db, int n_slots, uint64_t master_seed,
                                  int threads = 1);

EvalPoint evaluate_on(std::span<const Sample> samples, const PilotPattern& pattern,
                      const EstimatorRef& est, double ebno_db, SlotSums* per_slot = nullptr);

/// Mean NMSE in dB over pooled slot sums plus a 95% bootstrap interval.
EvalPoint summarize_slots(const SlotSums& sums, double ebno_db, uint64_t bootstrap_seed = 17,
                          int resamples = 1000);

struct ResultRow {
  std::string estimator;
  int pilots = 0;
  double ebno_db = 0.0;
  double nmse_db = 0.0, ci_lo_db = 0.0, ci_hi_db = 0.0;
  int64_t params = 0, flops = 0;
  double seconds = 0.0;
};

std::string result_csv_header();
std::string to_csv_line(const ResultRow& row);
void write_result_csv(const std::string& path, std::span<const ResultRow> rows);

}  // namespace bimce
