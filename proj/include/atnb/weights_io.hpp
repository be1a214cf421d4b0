#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "atnb/layers.hpp"

namespace atnb {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

// Little-endian weight file:
//   "ATNB", version u32,
//   config: layer_kind, num_layers, dim, heads, ff_mult, conv_kernel,
//           persistent_slots, activation, value_mult (u32 each), seed u64,
//   schedule: group count u32 (0 = none), then (leader u32, size u32) per group,
//   per layer: head count u32, then every tensor in for_each_tensor order as
//              rows u32, cols u32, rows·cols f32 (vectors are 1×n, absent 0×0).
std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights);
ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace atnb
