#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "atnb/layers.hpp"
#include "atnb/schedule.hpp"

namespace atnb {

// A model config plus the optional extras a config file may carry.
struct RunConfig {
  ModelConfig model;
  std::optional<ReuseSchedule> schedule;
  std::optional<std::uint64_t> gate_seed;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// "conformer-m" or "allattention-lm".
RunConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

// Accepts a JSON object or "key = value" lines ('#' starts a comment). Keys:
// layer_kind, num_layers, dim, heads, ff_mult, conv_kernel, persistent_slots,
// activation, value_mult, seed, reuse ("AxB"), reuse_groups, gate_seed.
// Unknown keys and invalid values raise ConfigError naming the line.
RunConfig parse_config(std::string_view text, std::string_view source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// key = value text that parse_config maps back to an equal RunConfig.
std::string dump_config(const RunConfig& config);

// "128,256,512" or "a..b" (multiples of a up to b) or "a..b:x2" (doubling).
std::vector<int> parse_lengths(std::string_view text);

}  // namespace atnb
