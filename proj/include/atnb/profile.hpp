#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "atnb/layers.hpp"
#include "atnb/pruning.hpp"
#include "atnb/schedule.hpp"

namespace atnb {

struct ParamCount {
  std::size_t weights = 0;
  std::size_t biases = 0;  // linear biases and LN offsets
  std::size_t total() const { return weights + biases; }
  friend bool operator==(const ParamCount&, const ParamCount&) = default;
};

struct ParamBreakdown {
  std::array<ParamCount, kParamCategoryCount> counts{};

  ParamCount& operator[](ParamCategory c) { return counts[static_cast<std::size_t>(c)]; }
  const ParamCount& operator[](ParamCategory c) const { return counts[static_cast<std::size_t>(c)]; }
  std::size_t total() const;
  double fraction(ParamCategory c) const;
  friend bool operator==(const ParamBreakdown&, const ParamBreakdown&) = default;
};

// Closed-form count from shapes alone. schedule applies value widening and
// Q/K/W_pos removal; gates (rounded deterministically) remove closed heads.
ParamBreakdown count_params(const ModelConfig& config, const ReuseSchedule* schedule = nullptr,
                            const GateSet* gates = nullptr);

// Scalars actually held by a weight set, by category.
ParamBreakdown count_params(const ModelWeights& weights);

// Multiply-add counts per submodule for one forward of length T.
struct FlopBreakdown {
  std::uint64_t sa_projection = 0;    // Q, K, V and output projections
  std::uint64_t sa_positional = 0;    // conformer relative-position term (leaders)
  std::uint64_t sa_map = 0;           // Q·Kᵀ (leaders only)
  std::uint64_t sa_weighted_sum = 0;  // A·V
  std::uint64_t ff = 0;
  std::uint64_t conv = 0;

  std::uint64_t sa() const { return sa_projection + sa_positional + sa_map + sa_weighted_sum; }
  std::uint64_t total() const { return sa() + ff + conv; }
};

FlopBreakdown flops_estimate(const ModelConfig& config, std::size_t length,
                             const ReuseSchedule* schedule = nullptr,
                             const GateSet* gates = nullptr);

struct LatencyRow {
  int length = 0;
  std::string submodule;  // FF, Conv, SA, ReuseSA, Norm or total
  double median_ms = 0.0;
  double iqr_ms = 0.0;
  int repeats = 0;
  int warmup = 0;
  std::string error;  // non-empty when this length failed
};

struct LatencyReport {
  std::string config;
  std::string reuse;
  double sparsity = 0.0;
  int threads = 1;
  std::string timestamp;
  std::vector<LatencyRow> rows;

  const LatencyRow* find(int length, const std::string& submodule) const;
};

inline constexpr const char* kLatencyCsvHeader =
    "config,reuse,sparsity,threads,length,submodule,median_ms,iqr_ms,repeats";

std::string to_csv(const LatencyReport& report);
std::string to_json(const LatencyReport& report);

struct BenchOptions {
  std::vector<int> lengths;
  int repeats = 20;
  int warmup = 3;
  int threads = 1;
  std::uint64_t seed = 0;
  std::string label;  // report.config; derived from the model when empty
};

// Median total forward time per length, batch size 1.
LatencyReport bench_forward(const ModelWeights& model, const BenchOptions& options);

// Per-submodule medians from instrumented runs plus an un-instrumented
// "total" row per length.
LatencyReport breakdown_latency(const ModelWeights& model, const BenchOptions& options);

// Median and interquartile range (linear interpolation between order
// statistics).
double median(std::vector<double> samples);
double interquartile_range(std::vector<double> samples);

std::string describe(const ModelConfig& config);
// Fraction of heads removed relative to L·H.
double head_sparsity(const ModelWeights& model);

}  // namespace atnb
