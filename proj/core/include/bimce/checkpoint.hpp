#pragma once

#include <string>
#include <utility>
#include <vector>

#include "bimce/model.hpp"

namespace bimce {

struct CheckpointMeta {
  uint64_t seed = 0;
  int epochs = 0;
  double best_val_nmse_db = 0.0;
};

/// On-disk model: a versioned text manifest (spec fields, training
/// metadata, named tensors with shapes and blob offsets) followed by a
/// little-endian float32 weight blob. Round-trips are bit-exact.
struct Checkpoint {
  ModelSpec spec;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint snapshot(const Model& model, const CheckpointMeta& meta);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Builds a model and installs the checkpoint weights; every parameter
/// declared by the spec must be present with a matching shape.
Model model_from_checkpoint(const Checkpoint& ck);

}  // namespace bimce
