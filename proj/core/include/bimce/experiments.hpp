#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bimce/config.hpp"
#include "bimce/dataset.hpp"
#include "bimce/evaluate.hpp"
#include "bimce/train.hpp"

namespace bimce {

struct CellOutcome {
  Checkpoint ckpt;
  TrainHistory history;  // empty when the cell came from the run cache
  bool from_cache = false;
};

/// Training and validation sets for one configuration (shared across
/// seeds of the same cell family).
struct TrainingData {
  std::shared_ptr<Dataset> train;
  std::shared_ptr<Dataset> val;
};

TrainingData make_training_data(const ExperimentConfig& cfg, int threads);

/// Trains one configuration, or loads the identical cell from
/// cache_dir (keyed by the cell hash) when present. Pass an empty
/// cache_dir to force training.
CellOutcome train_cell(const ExperimentConfig& cfg, const Dataset& train_set,
                       const Dataset& val_set, const std::string& cache_dir);

/// Table II-style study: every (estimator, pilot count) cell evaluated
/// at the sweep EbNo (default -20 dB). Learned estimators are trained
/// per cell over `n_seeds` seeds; their row carries the across-seed
/// mean with mean +/- std as the interval. Classical estimators carry
/// the bootstrap interval.
std::vector<ResultRow> pilot_sweep(const ExperimentConfig& base,
                                   const std::vector<int>& pilot_counts,
                                   const std::vector<std::string>& estimators,
                                   const std::string& cache_dir, int threads, int n_seeds,
                                   double sweep_ebno_db = -20.0);

/// Trains the four BIM placements under identical seeds (conv backbone
/// only) and evaluates them over the configured EbNo list.
std::vector<ResultRow> placement_ablation(const ExperimentConfig& base,
                                          const std::string& cache_dir, int threads,
                                          int n_seeds);

/// Learned-cell evaluation shared by the sweep/ablation paths: mean
/// over seeds at one EbNo. Also returns the per-seed values.
ResultRow evaluate_learned_cell(const ExperimentConfig& cfg, const std::string& label,
                                const std::vector<uint64_t>& seeds,
                                const TrainingData& data, const std::string& cache_dir,
                                double ebno_db, int threads,
                                std::vector<double>* per_seed_db = nullptr);

}  // namespace bimce
