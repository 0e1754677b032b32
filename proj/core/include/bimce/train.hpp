#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bimce/checkpoint.hpp"
#include "bimce/dataset.hpp"
#include "bimce/model.hpp"

namespace bimce {

struct TrainConfig {
  int batch = 128;
  float lr = 1e-3f;
  int epochs = 30;
  uint64_t seed = 1;       // weight init and shuffling
  uint64_t data_seed = 1;  // dataset sample derivation
  int train_samples = 40000;
  int val_samples = 2000;
  double ebno_lo_db = -20.0;
  double ebno_hi_db = 0.0;
};

struct TrainHistory {
  std::vector<double> train_loss;   // per-epoch mean batch loss
  std::vector<double> val_nmse_db;  // per-epoch validation NMSE
  int best_epoch = -1;
};

struct TrainResult {
  Checkpoint best;  // lowest validation NMSE
  TrainHistory history;
};

/// MSE training on re/im planes with Adam; keeps the best-validation
/// checkpoint. Single-threaded and bit-reproducible for a fixed
/// (spec, config, datasets). Aborts with diagnostics if the loss stops
/// being finite.
TrainResult train_model(const ModelSpec& spec, const TrainConfig& tc, const Dataset& train_set,
                        const Dataset& val_set);

/// Pooled validation NMSE of a model over a dataset (batched forward).
double validation_nmse_db(Model& model, const Dataset& ds, int batch = 256);

}  // namespace bimce
