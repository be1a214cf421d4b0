#pragma once

#include <span>
#include <vector>

#include "atnb/layers.hpp"

namespace atnb::detail {

struct AttentionRun {
  const Matrix* position_table = nullptr;  // conformer; built on demand when null
  std::span<const float> gates;            // empty means ungated
  const std::vector<Matrix>* shared_maps = nullptr;
  std::vector<Matrix>* maps_out = nullptr;
  int workers = 1;
};

// (H/Σg)·Σ_h g_h·SA_h·W_O_h + b_O, or the plain MHSA when ungated. Σg == 0
// yields b_O on every row.
Matrix attention_block(const Matrix& x, const AttentionWeights& weights,
                       const ModelConfig& config, const AttentionRun& run);

struct LayerRun {
  AttentionRun attention;
  SubmoduleTimes* times = nullptr;
  bool reuses_map = false;
};

Matrix layer_forward(const Matrix& x, const LayerWeights& weights, const ModelConfig& config,
                     const LayerRun& run);

ModelWeights allocate_and_init(const ModelConfig& config, const std::vector<bool>& map_free);

}  // namespace atnb::detail
