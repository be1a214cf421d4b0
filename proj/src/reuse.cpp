#include "atnb/reuse.hpp"

#include "atnb/error.hpp"
#include "attention_internal.hpp"

namespace atnb {

ModelWeights build_reuse_model(const ModelConfig& config, const ReuseSchedule& schedule) {
  if (schedule.num_layers() != config.num_layers) {
    throw ConfigError("reuse schedule " + schedule.to_string() + " covers " +
                      std::to_string(schedule.num_layers()) + " layers, config has " +
                      std::to_string(config.num_layers));
  }
  ModelConfig widened = config;
  widened.value_mult = schedule.shares_maps() ? 2 : 1;
  std::vector<bool> map_free(static_cast<std::size_t>(config.num_layers), false);
  for (int l = 0; l < config.num_layers; ++l) {
    map_free[static_cast<std::size_t>(l)] = !schedule.is_leader(l);
  }
  ModelWeights weights = detail::allocate_and_init(widened, map_free);
  weights.schedule = schedule;
  return weights;
}

Matrix reuse_forward(const ModelWeights& weights, const ReuseSchedule& schedule, const Matrix& x,
                     AttentionCounter& counter, int workers) {
  if (schedule.num_layers() != weights.config.num_layers) {
    throw ConfigError("reuse schedule " + schedule.to_string() + " covers " +
                      std::to_string(schedule.num_layers()) + " layers, model has " +
                      std::to_string(weights.config.num_layers));
  }
  for (int l = 0; l < weights.config.num_layers; ++l) {
    if (!schedule.is_leader(l)) continue;
    for (const auto& head : weights.layers[static_cast<std::size_t>(l)].attention.heads) {
      if (!head.computes_map()) {
        throw ConfigError("layer " + std::to_string(l) + " leads a reuse group but has no W_Q/W_K");
      }
    }
  }
  ForwardOptions options;
  options.workers = workers;
  options.schedule = &schedule;
  options.counter = &counter;
  return forward(weights, x, options);
}

}  // namespace atnb
