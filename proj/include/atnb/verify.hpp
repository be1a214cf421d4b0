#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "atnb/layers.hpp"

namespace atnb {

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Equivalence and property checks. Checks that run a full stack use the given
// config at short lengths; the rest use small instances of its layer kind.
std::vector<VerifyCheck> run_verify(const ModelConfig& config, std::uint64_t seed);

// Double-precision per-element MHSA with the same semantics as mhsa().
Matrix naive_mhsa(const Matrix& x, const AttentionWeights& weights, const ModelConfig& config);

}  // namespace atnb
