#pragma once

#include "atnb/layers.hpp"
#include "atnb/schedule.hpp"

namespace atnb {

// Fresh weights for a reuse model: value width doubled in every layer
// (value_mult = 2), followers without W_Q, W_K and W_pos. Head count is kept.
// A schedule of singleton groups (1xL) yields the plain baseline model.
ModelWeights build_reuse_model(const ModelConfig& config, const ReuseSchedule& schedule);

// Leaders compute and hold their maps; members apply them to their own
// values. counter gains one computed map per leader and one reused map per
// member.
Matrix reuse_forward(const ModelWeights& weights, const ReuseSchedule& schedule, const Matrix& x,
                     AttentionCounter& counter, int workers = 1);

}  // namespace atnb
