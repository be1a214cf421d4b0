#include "atnb/profile.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <new>
#include <sstream>

#include "atnb/error.hpp"
#include "json.hpp"

namespace atnb {

std::size_t ParamBreakdown::total() const {
  std::size_t sum = 0;
  for (const auto& c : counts) sum += c.total();
  return sum;
}

double ParamBreakdown::fraction(ParamCategory c) const {
  const std::size_t all = total();
  return all == 0 ? 0.0 : static_cast<double>((*this)[c].total()) / static_cast<double>(all);
}

namespace {

std::vector<std::size_t> heads_per_layer(const ModelConfig& config, const GateSet* gates) {
  std::vector<std::size_t> heads(static_cast<std::size_t>(config.num_layers),
                                 static_cast<std::size_t>(config.heads));
  if (!gates) return heads;
  if (gates->layers != config.num_layers || gates->heads != config.heads) {
    throw ShapeError("gate set shape does not match the model config");
  }
  const LayerGates det = deterministic_gates(*gates);
  for (std::size_t l = 0; l < heads.size(); ++l) {
    heads[l] = static_cast<std::size_t>(std::count(det[l].begin(), det[l].end(), 1.0f));
  }
  return heads;
}

bool leads(const ReuseSchedule* schedule, int layer) {
  return schedule == nullptr || schedule->is_leader(layer);
}

}  // namespace

ParamBreakdown count_params(const ModelConfig& config, const ReuseSchedule* schedule,
                            const GateSet* gates) {
  config.validate();
  if (schedule && schedule->num_layers() != config.num_layers) {
    throw ConfigError("reuse schedule does not cover the model's layers");
  }
  const auto d = static_cast<std::size_t>(config.dim);
  const auto dh = static_cast<std::size_t>(config.head_dim());
  const std::size_t vw = (schedule && schedule->shares_maps() ? 2 : static_cast<std::size_t>(config.value_mult)) * dh;
  const auto slots = static_cast<std::size_t>(config.persistent_slots);
  const auto ffs = static_cast<std::size_t>(config.ff_count());
  const auto inner = static_cast<std::size_t>(config.ff_mult) * d;
  const auto norms = static_cast<std::size_t>(config.norm_count());
  const bool conformer = config.layer_kind == LayerKind::conformer;
  const auto heads = heads_per_layer(config, gates);

  ParamBreakdown out;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::size_t n = heads[static_cast<std::size_t>(l)];
    const bool leader = leads(schedule, l);
    auto& sa = out[ParamCategory::sa];
    if (leader) {
      sa.weights += n * 2 * d * dh;
      sa.biases += n * 2 * dh;
      if (conformer) sa.weights += d * n * dh;
    }
    sa.weights += n * d * vw + n * vw * d;
    sa.biases += n * vw + d;
    out[ParamCategory::persistent_memory].weights += n * slots * (dh + vw);

    auto& ff = out[ParamCategory::ff];
    ff.weights += ffs * 2 * inner * d;
    ff.biases += ffs * (inner + d);

    if (conformer) {
      auto& conv = out[ParamCategory::conv];
      conv.weights += 2 * d * d + static_cast<std::size_t>(config.conv_kernel) * d + d * d;
      conv.biases += 2 * d + d + d;
    }
    out[ParamCategory::ln].weights += norms * d;
    out[ParamCategory::ln].biases += norms * d;
  }
  return out;
}

ParamBreakdown count_params(const ModelWeights& weights) {
  ParamBreakdown out;
  for (const auto& layer : weights.layers) {
    for_each_tensor(layer, weights.config, [&](const ConstTensorSlot& slot) {
      auto& entry = out[slot.category];
      (slot.is_bias ? entry.biases : entry.weights) += slot.size();
    });
  }
  return out;
}

FlopBreakdown flops_estimate(const ModelConfig& config, std::size_t length,
                             const ReuseSchedule* schedule, const GateSet* gates) {
  config.validate();
  if (length == 0) throw DomainError("flops_estimate needs T >= 1");
  using u64 = std::uint64_t;
  const u64 t = length;
  const auto d = static_cast<u64>(config.dim);
  const auto dh = static_cast<u64>(config.head_dim());
  const u64 vw = (schedule && schedule->shares_maps() ? 2 : static_cast<u64>(config.value_mult)) * dh;
  const u64 keys = t + static_cast<u64>(config.persistent_slots);
  const auto inner = static_cast<u64>(config.ff_mult) * d;
  const bool conformer = config.layer_kind == LayerKind::conformer;
  const auto heads = heads_per_layer(config, gates);

  FlopBreakdown out;
  for (int l = 0; l < config.num_layers; ++l) {
    const u64 n = heads[static_cast<std::size_t>(l)];
    const bool leader = leads(schedule, l);
    out.sa_projection += t * d * n * vw + t * n * vw * d;
    out.sa_weighted_sum += n * t * keys * vw;
    if (leader) {
      out.sa_projection += t * d * n * 2 * dh;
      out.sa_map += n * t * keys * dh;
      if (conformer && n > 0) out.sa_positional += (2 * t - 1) * d * n * dh + n * t * (2 * t - 1) * dh;
    }
    out.ff += static_cast<u64>(config.ff_count()) * 2 * t * d * inner;
    if (conformer) out.conv += t * d * 2 * d + t * static_cast<u64>(config.conv_kernel) * d + t * d * d;
  }
  return out;
}

// ---------------------------------------------------------------------------

double median(std::vector<double> samples) {
  if (samples.empty()) return std::nan("");
  std::sort(samples.begin(), samples.end());
  const std::size_t n = samples.size();
  return n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

double interquartile_range(std::vector<double> samples) {
  if (samples.empty()) return std::nan("");
  std::sort(samples.begin(), samples.end());
  return quantile_sorted(samples, 0.75) - quantile_sorted(samples, 0.25);
}

const LatencyRow* LatencyReport::find(int length, const std::string& submodule) const {
  for (const auto& row : rows) {
    if (row.length == length && row.submodule == submodule) return &row;
  }
  return nullptr;
}

std::string describe(const ModelConfig& config) {
  std::ostringstream os;
  os << to_string(config.layer_kind) << "-L" << config.num_layers << "-d" << config.dim << "-H"
     << config.heads;
  if (config.persistent_slots > 0) os << "-N" << config.persistent_slots;
  return os.str();
}

double head_sparsity(const ModelWeights& model) {
  const std::size_t total =
      static_cast<std::size_t>(model.config.num_layers) * static_cast<std::size_t>(model.config.heads);
  std::size_t present = 0;
  for (const auto& layer : model.layers) present += layer.attention.heads.size();
  return total == 0 || present >= total ? 0.0 : sparsity_ratio(total - present, total);
}

std::string to_csv(const LatencyReport& report) {
  std::ostringstream os;
  os << kLatencyCsvHeader << "\n";
  os << std::setprecision(6);
  for (const auto& row : report.rows) {
    os << report.config << "," << report.reuse << "," << report.sparsity << "," << report.threads
       << "," << row.length << "," << row.submodule << ",";
    if (row.error.empty()) {
      os << std::fixed << std::setprecision(4) << row.median_ms << "," << row.iqr_ms;
      os.unsetf(std::ios::floatfield);
      os << std::setprecision(6);
    } else {
      os << ",";
    }
    os << "," << row.repeats << "\n";
  }
  return os.str();
}

std::string to_json(const LatencyReport& report) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& row : report.rows) {
    nlohmann::json r = {{"config", report.config},     {"reuse", report.reuse},
                        {"sparsity", report.sparsity}, {"threads", report.threads},
                        {"length", row.length},        {"submodule", row.submodule},
                        {"repeats", row.repeats},      {"warmup", row.warmup}};
    if (row.error.empty()) {
      r["median_ms"] = row.median_ms;
      r["iqr_ms"] = row.iqr_ms;
    } else {
      r["median_ms"] = nullptr;
      r["iqr_ms"] = nullptr;
      r["error"] = row.error;
    }
    records.push_back(std::move(r));
  }
  const nlohmann::json doc = {{"metadata",
                               {{"config", report.config},
                                {"reuse", report.reuse},
                                {"sparsity", report.sparsity},
                                {"threads", report.threads},
                                {"batch_size", 1},
                                {"timestamp", report.timestamp}}},
                              {"records", records}};
  return doc.dump(2) + "\n";
}

namespace {

using Clock = std::chrono::steady_clock;

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void check_options(const BenchOptions& options) {
  if (options.repeats < 5) throw ConfigError("benchmarks need repeats >= 5");
  if (options.warmup < 1) throw ConfigError("benchmarks need warmup >= 1");
  if (options.threads < 1) throw ConfigError("thread count must be positive");
  if (options.lengths.empty()) throw ConfigError("no sequence lengths given");
  for (int t : options.lengths) {
    if (t < 1) throw ConfigError("sequence length must be positive, got " + std::to_string(t));
  }
}

LatencyReport make_report(const ModelWeights& model, const BenchOptions& options) {
  LatencyReport report;
  report.config = options.label.empty() ? describe(model.config) : options.label;
  report.reuse = model.schedule ? model.schedule->to_string()
                                : "1x" + std::to_string(model.config.num_layers);
  report.sparsity = head_sparsity(model);
  report.threads = options.threads;
  report.timestamp = utc_timestamp();
  return report;
}

Matrix bench_input(const ModelWeights& model, int length, std::uint64_t seed) {
  return random_matrix(static_cast<std::size_t>(length), static_cast<std::size_t>(model.config.dim),
                       seed * 7919u + static_cast<std::uint64_t>(length));
}

std::vector<double> time_totals(const ModelWeights& model, const Matrix& x, const BenchOptions& options) {
  ForwardOptions fwd;
  fwd.workers = options.threads;
  for (int i = 0; i < options.warmup; ++i) forward(model, x, fwd);
  std::vector<double> samples;
  for (int i = 0; i < options.repeats; ++i) {
    const auto start = Clock::now();
    const Matrix out = forward(model, x, fwd);
    samples.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
  }
  return samples;
}

LatencyRow summarize(int length, std::string submodule, const std::vector<double>& samples,
                     const BenchOptions& options) {
  return {length, std::move(submodule), median(samples), interquartile_range(samples),
          static_cast<int>(samples.size()), options.warmup, {}};
}

LatencyRow failed_row(int length, std::string submodule, const BenchOptions& options,
                      std::string error) {
  return {length, std::move(submodule), 0.0, 0.0, 0, options.warmup, std::move(error)};
}

}  // namespace

LatencyReport bench_forward(const ModelWeights& model, const BenchOptions& options) {
  check_options(options);
  LatencyReport report = make_report(model, options);
  for (int length : options.lengths) {
    try {
      const Matrix x = bench_input(model, length, options.seed);
      report.rows.push_back(summarize(length, "total", time_totals(model, x, options), options));
    } catch (const std::bad_alloc&) {
      report.rows.push_back(failed_row(length, "total", options, "out of memory"));
    }
  }
  return report;
}

LatencyReport breakdown_latency(const ModelWeights& model, const BenchOptions& options) {
  check_options(options);
  LatencyReport report = make_report(model, options);
  const ModelConfig& cfg = model.config;
  std::vector<Submodule> shown;
  if (cfg.ff_count() > 0) shown.push_back(Submodule::ff);
  if (cfg.layer_kind == LayerKind::conformer) shown.push_back(Submodule::conv);
  shown.push_back(Submodule::sa);
  if (model.schedule && model.schedule->group_count() < cfg.num_layers) {
    shown.push_back(Submodule::reuse_sa);
  }
  shown.push_back(Submodule::norm);

  for (int length : options.lengths) {
    try {
      const Matrix x = bench_input(model, length, options.seed);
      ForwardOptions fwd;
      fwd.workers = options.threads;
      for (int i = 0; i < options.warmup; ++i) forward(model, x, fwd);
      // Instrumented and plain runs alternate so both see the same machine state.
      std::array<std::vector<double>, kSubmoduleCount> per_module;
      std::vector<double> totals;
      for (int i = 0; i < options.repeats; ++i) {
        SubmoduleTimes times;
        fwd.times = &times;
        forward(model, x, fwd);
        for (std::size_t s = 0; s < kSubmoduleCount; ++s) {
          per_module[s].push_back(times.seconds[s] * 1e3);
        }
        fwd.times = nullptr;
        const auto start = Clock::now();
        const Matrix out = forward(model, x, fwd);
        totals.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
      }
      for (Submodule s : shown) {
        report.rows.push_back(
            summarize(length, std::string(to_string(s)), per_module[static_cast<std::size_t>(s)], options));
      }
      report.rows.push_back(summarize(length, "total", totals, options));
    } catch (const std::bad_alloc&) {
      for (Submodule s : shown) {
        report.rows.push_back(failed_row(length, std::string(to_string(s)), options, "out of memory"));
      }
      report.rows.push_back(failed_row(length, "total", options, "out of memory"));
    }
  }
  return report;
}

}  // namespace atnb
