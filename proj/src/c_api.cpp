#include "atnb/atnb.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "atnb/config_io.hpp"
#include "atnb/error.hpp"
#include "atnb/profile.hpp"
#include "atnb/pruning.hpp"
#include "atnb/reuse.hpp"
#include "atnb/verify.hpp"
#include "atnb/weights_io.hpp"

struct atnb_config {
  atnb::RunConfig run;
};

struct atnb_model {
  atnb::ModelWeights weights;
};

struct atnb_report {
  atnb::LatencyReport report;
};

struct atnb_prune_result {
  std::vector<atnb::GateTrainingStep> trajectory;
  std::vector<int> pruned_per_layer;
  double sparsity = 0.0;
  atnb::ModelWeights pruned;
};

struct atnb_verify_result {
  std::vector<atnb::VerifyCheck> checks;
};

namespace {

thread_local std::string g_last_error;

atnb_status fail(atnb_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Runs body and maps library exceptions onto status codes.
template <typename Fn>
atnb_status guarded(Fn&& body) {
  try {
    g_last_error.clear();
    body();
    return ATNB_OK;
  } catch (const atnb::ConfigError& e) {
    return fail(ATNB_ERR_CONFIG, e.what());
  } catch (const atnb::ShapeError& e) {
    return fail(ATNB_ERR_SHAPE, e.what());
  } catch (const atnb::DomainError& e) {
    return fail(ATNB_ERR_DOMAIN, e.what());
  } catch (const atnb::IoError& e) {
    return fail(ATNB_ERR_IO, e.what());
  } catch (const atnb::InvariantError& e) {
    return fail(ATNB_ERR_INVARIANT, e.what());
  } catch (const std::bad_alloc&) {
    return fail(ATNB_ERR_MEMORY, "out of memory");
  } catch (const std::exception& e) {
    return fail(ATNB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(ATNB_ERR_INTERNAL, "unknown error");
  }
}

#define ATNB_REQUIRE(ptr) \
  do { \
    if ((ptr) == nullptr) return fail(ATNB_ERR_ARGUMENT, #ptr " is null"); \
  } while (0)

char* copy_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

atnb::ModelWeights create_weights(const atnb::RunConfig& run) {
  if (run.schedule) return atnb::build_reuse_model(run.model, *run.schedule);
  return atnb::init_weights(run.model);
}

atnb::BenchOptions to_bench_options(const atnb_bench_options* o) {
  atnb::BenchOptions out;
  if (o->length_count > 0 && o->lengths == nullptr) throw atnb::ConfigError("lengths is null");
  out.lengths.assign(o->lengths, o->lengths + o->length_count);
  out.repeats = o->repeats;
  out.warmup = o->warmup;
  out.threads = o->threads;
  out.seed = o->seed;
  if (o->label) out.label = o->label;
  return out;
}

void fill_counts(const atnb::ParamBreakdown& b, atnb_param_counts* out) {
  for (std::size_t c = 0; c < atnb::kParamCategoryCount; ++c) {
    out->weights[c] = b.counts[c].weights;
    out->biases[c] = b.counts[c].biases;
  }
}

}  // namespace

extern "C" {

const char* atnb_version(void) { return "1.0.0"; }

const char* atnb_status_name(atnb_status status) {
  switch (status) {
    case ATNB_OK: return "ok";
    case ATNB_ERR_ARGUMENT: return "argument error";
    case ATNB_ERR_CONFIG: return "config error";
    case ATNB_ERR_SHAPE: return "shape error";
    case ATNB_ERR_DOMAIN: return "domain error";
    case ATNB_ERR_IO: return "i/o error";
    case ATNB_ERR_INVARIANT: return "invariant violated";
    case ATNB_ERR_MEMORY: return "out of memory";
    case ATNB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* atnb_last_error(void) { return g_last_error.c_str(); }

void atnb_string_free(char* text) { std::free(text); }

// ---- configs

atnb_status atnb_config_preset(const char* name, atnb_config** out) {
  ATNB_REQUIRE(name);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_config{atnb::preset_config(name)}; });
}

atnb_status atnb_config_load(const char* path, atnb_config** out) {
  ATNB_REQUIRE(path);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_config{atnb::load_config(path)}; });
}

atnb_status atnb_config_parse(const char* text, atnb_config** out) {
  ATNB_REQUIRE(text);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_config{atnb::parse_config(text)}; });
}

atnb_status atnb_config_clone(const atnb_config* config, atnb_config** out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_config{config->run}; });
}

atnb_status atnb_config_set_reuse(atnb_config* config, const char* schedule) {
  ATNB_REQUIRE(config);
  return guarded([&] {
    atnb::RunConfig& run = config->run;
    if (schedule == nullptr || *schedule == '\0') {
      run.schedule.reset();
      run.model.value_mult = 1;
      return;
    }
    const std::string text = schedule;
    run.schedule = text.find('x') != std::string::npos
                       ? atnb::parse_reuse_config(text, run.model.num_layers)
                       : atnb::parse_reuse_groups(text, run.model.num_layers);
    run.model.value_mult = run.schedule->shares_maps() ? 2 : 1;
  });
}

atnb_status atnb_config_set_seed(atnb_config* config, uint64_t seed) {
  ATNB_REQUIRE(config);
  config->run.model.seed = seed;
  return ATNB_OK;
}

atnb_status atnb_config_get(const atnb_config* config, const char* key, int64_t* value) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(key);
  ATNB_REQUIRE(value);
  const atnb::ModelConfig& m = config->run.model;
  const std::string k = key;
  if (k == "num_layers") *value = m.num_layers;
  else if (k == "dim") *value = m.dim;
  else if (k == "heads") *value = m.heads;
  else if (k == "ff_mult") *value = m.ff_mult;
  else if (k == "conv_kernel") *value = m.conv_kernel;
  else if (k == "persistent_slots") *value = m.persistent_slots;
  else if (k == "value_mult") *value = m.value_mult;
  else if (k == "seed") *value = static_cast<int64_t>(m.seed);
  else return fail(ATNB_ERR_ARGUMENT, "unknown integer config key '" + k + "'");
  return ATNB_OK;
}

atnb_status atnb_config_reuse(const atnb_config* config, char** out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] {
    *out = copy_string(config->run.schedule ? config->run.schedule->to_string() : std::string());
  });
}

atnb_status atnb_config_describe(const atnb_config* config, char** out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = copy_string(atnb::describe(config->run.model)); });
}

atnb_status atnb_config_dump(const atnb_config* config, char** out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = copy_string(atnb::dump_config(config->run)); });
}

void atnb_config_free(atnb_config* config) { delete config; }

// ---- models

atnb_status atnb_model_create(const atnb_config* config, atnb_model** out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_model{create_weights(config->run)}; });
}

atnb_status atnb_model_load(const char* path, atnb_model** out) {
  ATNB_REQUIRE(path);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_model{atnb::load_weights(path)}; });
}

atnb_status atnb_model_save(const atnb_model* model, const char* path) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(path);
  return guarded([&] { atnb::save_weights(model->weights, path); });
}

atnb_status atnb_model_config(const atnb_model* model, atnb_config** out) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_config{{model->weights.config, model->weights.schedule, {}}}; });
}

atnb_status atnb_model_head_count(const atnb_model* model, size_t* heads) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(heads);
  *heads = 0;
  for (const auto& layer : model->weights.layers) *heads += layer.attention.heads.size();
  return ATNB_OK;
}

atnb_status atnb_model_forward(const atnb_model* model, const float* x, size_t length, size_t dim,
                               int threads, float* out, atnb_attention_counts* counts) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(x);
  ATNB_REQUIRE(out);
  return guarded([&] {
    if (dim != static_cast<size_t>(model->weights.config.dim)) {
      throw atnb::ShapeError("input width " + std::to_string(dim) + " does not match d = " +
                             std::to_string(model->weights.config.dim));
    }
    if (threads < 1) throw atnb::ConfigError("thread count must be positive");
    atnb::Matrix input(length, dim);
    std::memcpy(input.data().data(), x, length * dim * sizeof(float));
    atnb::AttentionCounter counter;
    atnb::ForwardOptions options;
    options.workers = threads;
    options.counter = &counter;
    const atnb::Matrix y = atnb::forward(model->weights, input, options);
    std::memcpy(out, y.data().data(), y.size() * sizeof(float));
    if (counts) *counts = {counter.maps_computed, counter.maps_reused};
  });
}

atnb_status atnb_model_prune_uniform(const atnb_model* model, double fraction, atnb_model** out) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(out);
  return guarded([&] {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw atnb::DomainError("prune fraction must lie in [0, 1)");
    atnb::LayerGates gates;
    for (const auto& layer : model->weights.layers) {
      const std::size_t heads = layer.attention.heads.size();
      const auto removed = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(heads)));
      atnb::Vector g(heads, 1.0f);
      for (std::size_t h = heads - removed; h < heads; ++h) g[h] = 0.0f;
      gates.push_back(std::move(g));
    }
    *out = new atnb_model{atnb::prune_heads(model->weights, gates)};
  });
}

void atnb_model_free(atnb_model* model) { delete model; }

// ---- parameter counts

const char* atnb_category_name(atnb_category category) {
  if (category < 0 || category >= ATNB_CATEGORY_COUNT) return "";
  return atnb::to_string(static_cast<atnb::ParamCategory>(category)).data();
}

atnb_status atnb_config_count_params(const atnb_config* config, atnb_param_counts* out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] {
    const auto* schedule = config->run.schedule ? &*config->run.schedule : nullptr;
    fill_counts(atnb::count_params(config->run.model, schedule), out);
  });
}

atnb_status atnb_model_count_params(const atnb_model* model, atnb_param_counts* out) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(out);
  return guarded([&] { fill_counts(atnb::count_params(model->weights), out); });
}

// ---- latency

atnb_bench_options atnb_bench_defaults(void) {
  const atnb::BenchOptions d;
  return {nullptr, 0, d.repeats, d.warmup, d.threads, d.seed, nullptr};
}

atnb_status atnb_bench(const atnb_model* model, const atnb_bench_options* options, atnb_report** out) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(options);
  ATNB_REQUIRE(out);
  return guarded([&] {
    *out = new atnb_report{atnb::bench_forward(model->weights, to_bench_options(options))};
  });
}

atnb_status atnb_breakdown(const atnb_model* model, const atnb_bench_options* options,
                           atnb_report** out) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(options);
  ATNB_REQUIRE(out);
  return guarded([&] {
    *out = new atnb_report{atnb::breakdown_latency(model->weights, to_bench_options(options))};
  });
}

size_t atnb_report_row_count(const atnb_report* report) {
  return report ? report->report.rows.size() : 0;
}

atnb_status atnb_report_row(const atnb_report* report, size_t index, atnb_latency_row* row) {
  ATNB_REQUIRE(report);
  ATNB_REQUIRE(row);
  if (index >= report->report.rows.size()) {
    return fail(ATNB_ERR_ARGUMENT, "row index " + std::to_string(index) + " out of range");
  }
  const atnb::LatencyRow& r = report->report.rows[index];
  *row = {r.length, r.submodule.c_str(), r.median_ms, r.iqr_ms, r.repeats, r.warmup, r.error.c_str()};
  return ATNB_OK;
}

atnb_status atnb_report_csv(const atnb_report* report, char** out) {
  ATNB_REQUIRE(report);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = copy_string(atnb::to_csv(report->report)); });
}

atnb_status atnb_report_json(const atnb_report* report, char** out) {
  ATNB_REQUIRE(report);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = copy_string(atnb::to_json(report->report)); });
}

const char* atnb_latency_csv_header(void) { return atnb::kLatencyCsvHeader; }

void atnb_report_free(atnb_report* report) { delete report; }

// ---- head pruning

atnb_prune_options atnb_prune_defaults(void) {
  const atnb::GateTrainingOptions d;
  return {0.01, d.steps, d.learning_rate, atnb::kDefaultGateTemperature, 2.0, d.fd_step, d.seed, 2, 16};
}

atnb_status atnb_prune(const atnb_model* model, const atnb_prune_options* options,
                       atnb_prune_result** out) {
  ATNB_REQUIRE(model);
  ATNB_REQUIRE(options);
  ATNB_REQUIRE(out);
  return guarded([&] {
    const atnb::ModelWeights& w = model->weights;
    const int layers = w.config.num_layers;
    const int heads = w.layers.empty() ? 0 : static_cast<int>(w.layers.front().attention.heads.size());
    atnb::GateSet gates = atnb::GateSet::uniform(layers, heads, static_cast<float>(options->initial_logit),
                                                 static_cast<float>(options->lambda),
                                                 static_cast<float>(options->temperature));
    const atnb::SyntheticTask task(w, options->seed, options->task_batch, options->task_length);
    atnb::GateTrainingOptions train;
    train.steps = options->steps;
    train.learning_rate = options->learning_rate;
    train.seed = options->seed;
    train.fd_step = options->fd_step;

    auto result = std::make_unique<atnb_prune_result>();
    gates = atnb::train_gates(w, gates, task, train, &result->trajectory);
    gates.mode = atnb::GateMode::deterministic;
    result->pruned_per_layer = atnb::pruned_per_layer(gates);
    std::size_t closed = 0;
    for (int c : result->pruned_per_layer) closed += static_cast<std::size_t>(c);
    result->sparsity = atnb::sparsity_ratio(closed, gates.size());
    result->pruned = atnb::prune_heads(w, gates);
    *out = result.release();
  });
}

size_t atnb_prune_step_count(const atnb_prune_result* result) {
  return result ? result->trajectory.size() : 0;
}

atnb_status atnb_prune_step_at(const atnb_prune_result* result, size_t index, atnb_prune_step* step) {
  ATNB_REQUIRE(result);
  ATNB_REQUIRE(step);
  if (index >= result->trajectory.size()) {
    return fail(ATNB_ERR_ARGUMENT, "step index " + std::to_string(index) + " out of range");
  }
  const auto& s = result->trajectory[index];
  *step = {s.step, s.sparsity_loss, s.open_gates, s.task_loss};
  return ATNB_OK;
}

size_t atnb_prune_layer_count(const atnb_prune_result* result) {
  return result ? result->pruned_per_layer.size() : 0;
}

atnb_status atnb_prune_layer_pruned(const atnb_prune_result* result, int* counts) {
  ATNB_REQUIRE(result);
  ATNB_REQUIRE(counts);
  std::copy(result->pruned_per_layer.begin(), result->pruned_per_layer.end(), counts);
  return ATNB_OK;
}

atnb_status atnb_prune_sparsity(const atnb_prune_result* result, double* ratio) {
  ATNB_REQUIRE(result);
  ATNB_REQUIRE(ratio);
  *ratio = result->sparsity;
  return ATNB_OK;
}

atnb_status atnb_prune_model(const atnb_prune_result* result, atnb_model** out) {
  ATNB_REQUIRE(result);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_model{result->pruned}; });
}

void atnb_prune_result_free(atnb_prune_result* result) { delete result; }

atnb_status atnb_sparsity_ratio(size_t pruned, size_t total, double* ratio) {
  ATNB_REQUIRE(ratio);
  return guarded([&] { *ratio = atnb::sparsity_ratio(pruned, total); });
}

// ---- verification

atnb_status atnb_verify(const atnb_config* config, uint64_t seed, atnb_verify_result** out) {
  ATNB_REQUIRE(config);
  ATNB_REQUIRE(out);
  return guarded([&] { *out = new atnb_verify_result{atnb::run_verify(config->run.model, seed)}; });
}

size_t atnb_verify_count(const atnb_verify_result* result) { return result ? result->checks.size() : 0; }

atnb_status atnb_verify_check(const atnb_verify_result* result, size_t index, const char** name,
                              int* passed, const char** detail) {
  ATNB_REQUIRE(result);
  if (index >= result->checks.size()) {
    return fail(ATNB_ERR_ARGUMENT, "check index " + std::to_string(index) + " out of range");
  }
  const auto& c = result->checks[index];
  if (name) *name = c.name.c_str();
  if (passed) *passed = c.passed ? 1 : 0;
  if (detail) *detail = c.detail.c_str();
  return ATNB_OK;
}

int atnb_verify_all_passed(const atnb_verify_result* result) {
  if (!result || result->checks.empty()) return 0;
  for (const auto& c : result->checks) {
    if (!c.passed) return 0;
  }
  return 1;
}

void atnb_verify_result_free(atnb_verify_result* result) { delete result; }

// ---- helpers

atnb_status atnb_parse_lengths(const char* text, int* lengths, size_t capacity, size_t* count) {
  ATNB_REQUIRE(text);
  ATNB_REQUIRE(count);
  return guarded([&] {
    const std::vector<int> parsed = atnb::parse_lengths(text);
    *count = parsed.size();
    if (capacity > 0 && lengths == nullptr) throw atnb::ConfigError("lengths buffer is null");
    for (std::size_t i = 0; i < parsed.size() && i < capacity; ++i) lengths[i] = parsed[i];
  });
}

}  // extern "C"
