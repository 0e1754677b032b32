#pragma once

#include <string>
#include <vector>

#include "bimce/channel.hpp"
#include "bimce/estimators.hpp"
#include "bimce/model.hpp"
#include "bimce/resource_grid.hpp"
#include "bimce/train.hpp"

namespace bimce {

struct PatternConfig {
  int n_freq = 24;                   // pilot subcarriers
  std::vector<int> symbols = {2, 11};  // pilot OFDM symbols, 0-based
};

struct EvalConfig {
  int test_samples = 1000;
  std::vector<double> ebno_list = {-20, -15, -10, -5, 0};
};

struct LmmseConfig {
  int calibration_samples = 10000;
  float epsilon = 1e-4f;
};

/// Whole-experiment configuration, parsed from `section.key = value`
/// text. Model grid dimensions are derived from sim/pattern, never set
/// directly.
struct ExperimentConfig {
  SimConfig sim;
  PatternConfig pattern;
  ModelSpec model;
  TrainConfig train;
  EvalConfig eval;
  LmmseConfig lmmse;

  /// Syncs derived fields and validates everything; throws
  /// std::invalid_argument naming the offending key.
  void finalize();

  PilotPattern make_pattern() const { return make_pilot_pattern(sim, pattern.n_freq, pattern.symbols); }

  /// Canonical key = value listing (sorted), used for echo and hashing.
  std::string echo() const;
  uint64_t hash() const;
  /// Hash of the fields the LMMSE statistics depend on (covariance
  /// cache key): sim, pattern and calibration settings.
  uint64_t stats_hash() const;
  /// Hash of one training cell: sim + pattern + model + train.
  uint64_t cell_hash() const;
};

/// Applies one `key = value` assignment; unknown keys and malformed
/// values throw std::invalid_argument naming the key.
void apply_config_line(ExperimentConfig& cfg, const std::string& key, const std::string& value);

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config_file(const std::string& path,
                                   const std::vector<std::string>& overrides = {});

uint64_t fnv1a(const std::string& s);

/// Covariance cache codec (magic BIMCOV1): header with config hash and
/// dims, then mean and R_gg as little-endian complex float32.
void write_covariance(const std::string& path, const CovarianceModel& cov, uint64_t config_hash);
CovarianceModel read_covariance(const std::string& path, uint64_t expect_hash);

/// Calibrates (or loads from cache_dir when present) the LMMSE
/// statistics for this configuration.
CovarianceModel lmmse_statistics(const ExperimentConfig& cfg, const std::string& cache_dir,
                                 int threads);

}  // namespace bimce
