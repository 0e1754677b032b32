#pragma once

#include <span>
#include <string>
#include <vector>

#include "bimce/array.hpp"
#include "bimce/channel.hpp"
#include "bimce/estimators.hpp"
#include "bimce/resource_grid.hpp"

namespace bimce {

/// One link-level example: true equivalent channel, LS pilot estimate
/// and the per-antenna belief, all reproducible from (seed, ebno,
/// config).
struct Sample {
  float ebno_db = 0.f;
  uint64_t seed = 0;
  std::vector<float> belief_mu;  // linear SNR per receive antenna
  ComplexGrid g_true;            // [n_rx, n_s, n_c, n_l]
  ComplexGrid g_ls_p;            // [n_rx, n_s, n_cp, n_lp]
};

struct DatasetHeader {
  uint32_t version = 1;
  uint32_t n_rx = 0, n_s = 0, n_c = 0, n_l = 0, n_cp = 0, n_lp = 0;
  uint32_t count = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Sample> samples;
};

enum class Split { kTrain, kVal, kTest };

uint64_t sample_seed_for(uint64_t master, Split split, int index, double ebno_db = 0.0);

/// Full per-sample pipeline: tapped-delay-line channel, wideband SVD
/// precoder, pilot-position receive, LS estimate, genie belief.
Sample make_sample(const SimConfig& cfg, const PilotPattern& pattern, double ebno_db,
                   uint64_t sample_seed);

struct GenSpec {
  int count = 0;
  Split split = Split::kTrain;
  double ebno_lo_db = -20.0, ebno_hi_db = 0.0;  // train/val draw uniformly
  double fixed_ebno_db = 0.0;                   // test splits use this value
};

/// Deterministic in (cfg, pattern, spec, seed) regardless of thread
/// count: per-sample seeds are derived by index.
Dataset generate_dataset(const SimConfig& cfg, const PilotPattern& pattern, const GenSpec& spec,
                         uint64_t master_seed, int threads = 1);

/// Binary dataset codec (magic BIMCE1, little-endian).
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

/// Batch assembly for training/inference: interleaved re/im planes,
/// dB beliefs and full-grid targets.
void fill_planes(std::span<const Sample> samples, std::span<const int> idx, Tensor& planes,
                 Tensor& belief_db);
void fill_targets(std::span<const Sample> samples, std::span<const int> idx, Tensor& target);

}  // namespace bimce
