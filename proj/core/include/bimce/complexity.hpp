#pragma once

#include <cstdint>

#include "bimce/model.hpp"

namespace bimce {

/// Storage and per-forward compute of a model spec at batch 1.
/// Convention: FLOPs = 2 * MACs for dense/conv layers plus the gating
/// cost (belief MLP MACs and one multiply per gated feature element);
/// bias adds, activations, normalization, and resizing are not counted.
struct Complexity {
  int64_t params = 0;
  int64_t flops = 0;
};

Complexity count_complexity(const ModelSpec& spec);

}  // namespace bimce
