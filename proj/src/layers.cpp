#include "atnb/layers.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "atnb/error.hpp"
#include "attention_internal.hpp"

namespace atnb {

LayerKind parse_layer_kind(std::string_view name) {
  if (name == "transformer") return LayerKind::transformer;
  if (name == "conformer") return LayerKind::conformer;
  if (name == "all_attention") return LayerKind::all_attention;
  throw ConfigError("unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::transformer: return "transformer";
    case LayerKind::conformer: return "conformer";
    case LayerKind::all_attention: return "all_attention";
  }
  return "?";
}

std::string_view to_string(ParamCategory category) {
  switch (category) {
    case ParamCategory::ff: return "FF";
    case ParamCategory::sa: return "SA";
    case ParamCategory::conv: return "Conv";
    case ParamCategory::ln: return "LN";
    case ParamCategory::persistent_memory: return "persistent_memory";
  }
  return "?";
}

std::string_view to_string(Submodule submodule) {
  switch (submodule) {
    case Submodule::ff: return "FF";
    case Submodule::conv: return "Conv";
    case Submodule::sa: return "SA";
    case Submodule::reuse_sa: return "ReuseSA";
    case Submodule::norm: return "Norm";
  }
  return "?";
}

int ModelConfig::ff_count() const {
  switch (layer_kind) {
    case LayerKind::transformer: return 1;
    case LayerKind::conformer: return 2;
    case LayerKind::all_attention: return 0;
  }
  return 0;
}

int ModelConfig::norm_count() const {
  switch (layer_kind) {
    case LayerKind::transformer: return 2;
    case LayerKind::conformer: return 5;
    case LayerKind::all_attention: return 1;
  }
  return 0;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (num_layers <= 0) fail("num_layers must be positive");
  if (dim <= 0) fail("dim must be positive");
  if (heads <= 0) fail("heads must be positive");
  if (dim % heads != 0) {
    fail("dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  if (ff_mult <= 0) fail("ff_mult must be positive");
  if (layer_kind == LayerKind::conformer && (conv_kernel <= 0 || conv_kernel % 2 == 0)) {
    fail("conv_kernel must be a positive odd number, got " + std::to_string(conv_kernel));
  }
  if (persistent_slots < 0) fail("persistent_slots must be non-negative");
  if (persistent_slots > 0 && layer_kind != LayerKind::all_attention) {
    fail("persistent_slots only applies to all_attention layers");
  }
  if (value_mult != 1 && value_mult != 2) fail("value_mult must be 1 or 2");
  if (activation == Activation::glu) fail("glu is not a feed-forward activation");
}

std::size_t ModelWeights::scalar_count() const {
  std::size_t total = 0;
  for (const auto& layer : layers) {
    for_each_tensor(layer, config, [&](const ConstTensorSlot& slot) { total += slot.size(); });
  }
  return total;
}

bool bitwise_equal(const ModelWeights& a, const ModelWeights& b) {
  if (!(a.config == b.config) || a.layers.size() != b.layers.size() || a.schedule != b.schedule) {
    return false;
  }
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    std::vector<std::span<const float>> lhs, rhs;
    std::vector<std::pair<std::size_t, std::size_t>> lshape, rshape;
    auto collect = [](auto& spans, auto& shapes) {
      return [&spans, &shapes](const ConstTensorSlot& slot) {
        if (slot.matrix) {
          spans.push_back(slot.matrix->data());
          shapes.emplace_back(slot.matrix->rows(), slot.matrix->cols());
        } else {
          spans.push_back(*slot.vector);
          shapes.emplace_back(1, slot.vector->size());
        }
      };
    };
    for_each_tensor(a.layers[l], a.config, collect(lhs, lshape));
    for_each_tensor(b.layers[l], b.config, collect(rhs, rshape));
    if (lhs.size() != rhs.size() || lshape != rshape) return false;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      if (!bitwise_equal(lhs[i], rhs[i])) return false;
    }
  }
  return true;
}

namespace {

// Uniform [0, 1) from the top 24 bits; keeps draws identical across
// standard library implementations.
float unit_uniform(std::mt19937_64& rng) {
  return static_cast<float>(rng() >> 40) * 0x1p-24f;
}

LayerWeights allocate_layer(const ModelConfig& cfg, bool map_free) {
  const auto d = static_cast<std::size_t>(cfg.dim);
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  const auto vw = static_cast<std::size_t>(cfg.value_width());
  const auto heads = static_cast<std::size_t>(cfg.heads);
  const auto slots = static_cast<std::size_t>(cfg.persistent_slots);
  const auto inner = static_cast<std::size_t>(cfg.ff_mult) * d;

  LayerWeights layer;
  auto& attn = layer.attention;
  attn.heads.resize(heads);
  for (auto& head : attn.heads) {
    if (!map_free) {
      head.w_q = Matrix(d, dh);
      head.b_q.assign(dh, 0.0f);
      head.w_k = Matrix(d, dh);
      head.b_k.assign(dh, 0.0f);
    }
    head.w_v = Matrix(d, vw);
    head.b_v.assign(vw, 0.0f);
    if (slots > 0) {
      head.mem_k = Matrix(slots, dh);
      head.mem_v = Matrix(slots, vw);
    }
  }
  attn.w_o = Matrix(heads * vw, d);
  attn.b_o.assign(d, 0.0f);
  if (cfg.layer_kind == LayerKind::conformer && !map_free) attn.w_pos = Matrix(d, d);

  for (int i = 0; i < cfg.ff_count(); ++i) {
    layer.ff.push_back({Matrix(d, inner), Vector(inner, 0.0f), Matrix(inner, d), Vector(d, 0.0f)});
  }
  if (cfg.layer_kind == LayerKind::conformer) {
    const auto k = static_cast<std::size_t>(cfg.conv_kernel);
    layer.conv = ConvWeights{Matrix(d, 2 * d), Vector(2 * d, 0.0f), Matrix(k, d),
                             Vector(d, 0.0f),  Matrix(d, d),       Vector(d, 0.0f)};
  }
  for (int i = 0; i < cfg.norm_count(); ++i) {
    layer.norms.push_back({Vector(d, 1.0f), Vector(d, 0.0f)});
  }
  return layer;
}

using Clock = std::chrono::steady_clock;

class ScopedTimer {
 public:
  ScopedTimer(SubmoduleTimes* times, Submodule which)
      : times_(times), which_(which), start_(times ? Clock::now() : Clock::time_point{}) {}
  ~ScopedTimer() {
    if (times_) (*times_)[which_] += std::chrono::duration<double>(Clock::now() - start_).count();
  }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  SubmoduleTimes* times_;
  Submodule which_;
  Clock::time_point start_;
};

Matrix head_map(const Matrix& x, const HeadWeights& head, std::size_t head_index,
                const Matrix* position_logits_source, const ModelConfig& cfg, int workers) {
  const std::size_t length = x.rows();
  const auto dh = static_cast<std::size_t>(cfg.head_dim());
  const Matrix q = linear(x, head.w_q, head.b_q, workers);
  Matrix k = linear(x, head.w_k, head.b_k, workers);
  if (!head.mem_k.empty()) k = concat_rows(k, head.mem_k);

  Matrix logits = matmul(q, k, true, workers);
  if (position_logits_source) {
    // Relative term q_i·p_(i-j): product with all 2T-1 offsets, then shifted.
    const Matrix p = column_block(*position_logits_source, head_index * dh, dh);
    const Matrix qp = matmul(q, p, true, workers);
    for (std::size_t i = 0; i < length; ++i) {
      auto row = logits.row(i);
      const float* rel = qp.row(i).data() + i + length - 1;
      for (std::size_t j = 0; j < length; ++j) row[j] += *(rel - j);
    }
  }
  scale_inplace(logits, 1.0f / std::sqrt(static_cast<float>(dh)));
  if (cfg.causal()) {
    constexpr float kMasked = -std::numeric_limits<float>::infinity();
    for (std::size_t i = 0; i + 1 < length; ++i) {
      auto row = logits.row(i);
      for (std::size_t j = i + 1; j < length; ++j) row[j] = kMasked;
    }
  }
  softmax_rows_inplace(logits);
  return logits;
}

}  // namespace

Matrix relative_position_table(std::size_t length, std::size_t dim) {
  const std::size_t rows = 2 * length - 1;
  Matrix table(rows, dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const double offset = static_cast<double>(r) - static_cast<double>(length - 1);
    auto row = table.row(r);
    for (std::size_t c = 0; c < dim; c += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(c) / static_cast<double>(dim));
      row[c] = static_cast<float>(std::sin(offset * freq));
      if (c + 1 < dim) row[c + 1] = static_cast<float>(std::cos(offset * freq));
    }
  }
  return table;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, float scale) {
  std::mt19937_64 rng(seed);
  Matrix m(rows, cols);
  for (float& v : m.data()) v = (2.0f * unit_uniform(rng) - 1.0f) * scale;
  return m;
}

namespace detail {

ModelWeights allocate_and_init(const ModelConfig& config, const std::vector<bool>& map_free) {
  config.validate();
  ModelWeights weights;
  weights.config = config;
  std::mt19937_64 rng(config.seed);
  for (int l = 0; l < config.num_layers; ++l) {
    const bool free = !map_free.empty() && map_free[static_cast<std::size_t>(l)];
    weights.layers.push_back(allocate_layer(config, free));
    for_each_tensor(weights.layers.back(), config, [&](const TensorSlot& slot) {
      if (!slot.matrix) return;  // biases stay 0, LN gains stay 1
      const float bound = 1.0f / std::sqrt(static_cast<float>(slot.fan_in));
      for (float& v : slot.matrix->data()) v = (2.0f * unit_uniform(rng) - 1.0f) * bound;
    });
  }
  return weights;
}

Matrix attention_block(const Matrix& x, const AttentionWeights& weights,
                       const ModelConfig& config, const AttentionRun& run) {
  const std::size_t length = x.rows();
  const std::size_t heads = weights.heads.size();
  if (x.cols() != static_cast<std::size_t>(config.dim)) {
    throw ShapeError("attention input " + x.shape_string() + " does not have d = " +
                     std::to_string(config.dim) + " columns");
  }
  const bool gated = !run.gates.empty();
  if (gated && run.gates.size() != heads) {
    throw ShapeError("gate vector of length " + std::to_string(run.gates.size()) + " for " +
                     std::to_string(heads) + " heads");
  }
  float gate_sum = 0.0f;
  for (float g : run.gates) gate_sum += g;
  if (run.shared_maps && run.shared_maps->size() != heads) {
    throw InvariantError("reused map count " + std::to_string(run.shared_maps->size()) +
                         " does not match head count " + std::to_string(heads));
  }

  Matrix out;
  const bool all_closed = gated && gate_sum == 0.0f;
  if (heads == 0 || (all_closed && !run.maps_out)) {
    out = Matrix(length, static_cast<std::size_t>(config.dim));
    add_row_bias(out, weights.b_o);
    return out;
  }

  Matrix position_logits_source;
  if (!run.shared_maps && !weights.w_pos.empty()) {
    if (run.position_table && run.position_table->rows() == 2 * length - 1) {
      position_logits_source = matmul(*run.position_table, weights.w_pos, false, run.workers);
    } else {
      position_logits_source =
          matmul(relative_position_table(length, x.cols()), weights.w_pos, false, run.workers);
    }
  }

  const std::size_t value_width = weights.heads.front().w_v.cols();
  Matrix concat(length, heads * value_width);
  for (std::size_t h = 0; h < heads; ++h) {
    const HeadWeights& head = weights.heads[h];
    const float gate = gated ? run.gates[h] : 1.0f;
    if (gate == 0.0f && !run.maps_out) continue;
    Matrix computed;
    const Matrix* map = nullptr;
    if (run.shared_maps) {
      map = &(*run.shared_maps)[h];
    } else {
      if (!head.computes_map()) {
        throw InvariantError("head " + std::to_string(h) +
                             " has no query/key projections and no reused map");
      }
      computed = head_map(x, head, h, position_logits_source.empty() ? nullptr : &position_logits_source,
                          config, run.workers);
      map = &computed;
    }
    if (gate != 0.0f) {
      Matrix v = linear(x, head.w_v, head.b_v, run.workers);
      if (!head.mem_v.empty()) v = concat_rows(v, head.mem_v);
      Matrix sa = matmul(*map, v, false, run.workers);
      if (gate != 1.0f) scale_inplace(sa, gate);
      set_column_block(concat, h * value_width, sa);
    }
    if (run.maps_out) run.maps_out->push_back(run.shared_maps ? *map : std::move(computed));
  }
  if (all_closed) {
    out = Matrix(length, static_cast<std::size_t>(config.dim));
    add_row_bias(out, weights.b_o);
    return out;
  }
  out = matmul(concat, weights.w_o, false, run.workers);
  if (gated) {
    const float scale = static_cast<float>(heads) / gate_sum;
    if (scale != 1.0f) scale_inplace(out, scale);
  }
  add_row_bias(out, weights.b_o);
  return out;
}

Matrix layer_forward(const Matrix& x, const LayerWeights& weights, const ModelConfig& config,
                     const LayerRun& run) {
  const Submodule sa_kind = run.reuses_map ? Submodule::reuse_sa : Submodule::sa;
  const auto& norms = weights.norms;
  if (norms.size() != static_cast<std::size_t>(config.norm_count())) {
    throw ShapeError("layer has " + std::to_string(norms.size()) + " norms, expected " +
                     std::to_string(config.norm_count()));
  }
  switch (config.layer_kind) {
    case LayerKind::transformer: {
      Matrix z;
      {
        ScopedTimer t(run.times, sa_kind);
        z = attention_block(x, weights.attention, config, run.attention);
        add_scaled(z, x);
      }
      {
        ScopedTimer t(run.times, Submodule::norm);
        z = layer_norm(z, norms[0].gain, norms[0].bias);
      }
      Matrix f;
      {
        ScopedTimer t(run.times, Submodule::ff);
        f = feed_forward(z, weights.ff.at(0), config.activation);
        add_scaled(f, z);
      }
      ScopedTimer t(run.times, Submodule::norm);
      return layer_norm(f, norms[1].gain, norms[1].bias);
    }
    case LayerKind::conformer: {
      Matrix h = x;
      {
        ScopedTimer t(run.times, Submodule::ff);
        const Matrix f = feed_forward(layer_norm(h, norms[0].gain, norms[0].bias),
                                      weights.ff.at(0), config.activation);
        add_scaled(h, f, 0.5f);
      }
      {
        ScopedTimer t(run.times, sa_kind);
        const Matrix a = attention_block(layer_norm(h, norms[1].gain, norms[1].bias),
                                         weights.attention, config, run.attention);
        add_scaled(h, a);
      }
      {
        ScopedTimer t(run.times, Submodule::conv);
        if (!weights.conv) throw ShapeError("conformer layer without conv weights");
        const Matrix c = conv_module(layer_norm(h, norms[2].gain, norms[2].bias), *weights.conv);
        add_scaled(h, c);
      }
      {
        ScopedTimer t(run.times, Submodule::ff);
        const Matrix f = feed_forward(layer_norm(h, norms[3].gain, norms[3].bias),
                                      weights.ff.at(1), config.activation);
        add_scaled(h, f, 0.5f);
      }
      ScopedTimer t(run.times, Submodule::norm);
      return layer_norm(h, norms[4].gain, norms[4].bias);
    }
    case LayerKind::all_attention: {
      Matrix z;
      {
        ScopedTimer t(run.times, sa_kind);
        z = attention_block(x, weights.attention, config, run.attention);
        add_scaled(z, x);
      }
      ScopedTimer t(run.times, Submodule::norm);
      return layer_norm(z, norms[0].gain, norms[0].bias);
    }
  }
  throw ConfigError("unknown layer kind");
}

}  // namespace detail

ModelWeights init_weights(const ModelConfig& config) {
  if (config.value_mult != 1) {
    throw ConfigError("value_mult = 2 requires a reuse schedule; use build_reuse_model");
  }
  return detail::allocate_and_init(config, {});
}

QkvProjection project_qkv(const Matrix& x, const AttentionWeights& weights, std::size_t head) {
  if (head >= weights.heads.size()) {
    throw ShapeError("head index " + std::to_string(head) + " out of range for " +
                     std::to_string(weights.heads.size()) + " heads");
  }
  const HeadWeights& w = weights.heads[head];
  if (x.cols() != w.w_v.rows()) {
    throw ShapeError("projection input " + x.shape_string() + " does not match W_V " +
                     w.w_v.shape_string());
  }
  QkvProjection out;
  if (w.computes_map()) {
    out.q = linear(x, w.w_q, w.b_q);
    out.k = linear(x, w.w_k, w.b_k);
  }
  out.v = linear(x, w.w_v, w.b_v);
  return out;
}

Matrix attention_map(const Matrix& q, const Matrix& k) {
  if (q.cols() != k.cols()) {
    throw ShapeError("attention_map: Q " + q.shape_string() + " and K " + k.shape_string() +
                     " differ in head width");
  }
  Matrix logits = matmul(q, k, true);
  scale_inplace(logits, 1.0f / std::sqrt(static_cast<float>(q.cols())));
  softmax_rows_inplace(logits);
  return logits;
}

Matrix mhsa(const Matrix& x, const AttentionWeights& weights, const ModelConfig& config) {
  return detail::attention_block(x, weights, config, {});
}

Matrix feed_forward(const Matrix& x, const FeedForwardWeights& weights, Activation activation) {
  Matrix hidden = linear(x, weights.w1, weights.b1);
  hidden = pointwise_nonlinear(hidden, activation);
  return linear(hidden, weights.w2, weights.b2);
}

Matrix conv_module(const Matrix& x, const ConvWeights& weights) {
  Matrix h = linear(x, weights.pw1, weights.pb1);
  h = pointwise_nonlinear(h, Activation::glu);
  h = depthwise_conv1d(h, weights.depthwise);
  add_row_bias(h, weights.db);
  h = pointwise_nonlinear(h, Activation::swish);
  return linear(h, weights.pw2, weights.pb2);
}

namespace {

Matrix single_layer(const Matrix& x, const LayerWeights& weights, const ModelConfig& config,
                    LayerKind expected) {
  if (config.layer_kind != expected) {
    throw ConfigError("layer kind mismatch: config is " + std::string(to_string(config.layer_kind)) +
                      ", called as " + std::string(to_string(expected)));
  }
  if (x.cols() != static_cast<std::size_t>(config.dim)) {
    throw ShapeError("layer input " + x.shape_string() + " does not have d = " +
                     std::to_string(config.dim) + " columns");
  }
  return detail::layer_forward(x, weights, config, {});
}

}  // namespace

Matrix transformer_layer(const Matrix& x, const LayerWeights& weights, const ModelConfig& config) {
  return single_layer(x, weights, config, LayerKind::transformer);
}

Matrix conformer_layer(const Matrix& x, const LayerWeights& weights, const ModelConfig& config) {
  return single_layer(x, weights, config, LayerKind::conformer);
}

Matrix all_attention_layer(const Matrix& x, const LayerWeights& weights,
                           const ModelConfig& config) {
  return single_layer(x, weights, config, LayerKind::all_attention);
}

Matrix forward(const ModelWeights& weights, const Matrix& x, const ForwardOptions& options) {
  const ModelConfig& cfg = weights.config;
  if (x.cols() != static_cast<std::size_t>(cfg.dim)) {
    throw ShapeError("model input " + x.shape_string() + " does not have d = " +
                     std::to_string(cfg.dim) + " columns");
  }
  if (x.rows() == 0) throw ShapeError("model input has no rows");
  if (weights.layers.size() != static_cast<std::size_t>(cfg.num_layers)) {
    throw ShapeError("model has " + std::to_string(weights.layers.size()) + " layers, config says " +
                     std::to_string(cfg.num_layers));
  }
  const ReuseSchedule* schedule =
      options.schedule ? options.schedule : (weights.schedule ? &*weights.schedule : nullptr);
  if (schedule && schedule->num_layers() != cfg.num_layers) {
    throw ConfigError("reuse schedule covers " + std::to_string(schedule->num_layers()) +
                      " layers, model has " + std::to_string(cfg.num_layers));
  }
  if (options.gates && options.gates->size() != weights.layers.size()) {
    throw ShapeError("gates given for " + std::to_string(options.gates->size()) + " layers, model has " +
                     std::to_string(weights.layers.size()));
  }

  Matrix position_table;
  if (cfg.layer_kind == LayerKind::conformer) {
    position_table = relative_position_table(x.rows(), x.cols());
  }

  Matrix h = x;
  std::vector<Matrix> group_maps;
  int maps_owner = -1;
  for (int l = 0; l < cfg.num_layers; ++l) {
    const auto& layer = weights.layers[static_cast<std::size_t>(l)];
    const int leader = schedule ? schedule->leader_of(l) : l;
    const bool is_leader = leader == l;
    const bool stores = is_leader && schedule && schedule->group_end(l) > l;

    detail::LayerRun run;
    run.times = options.times;
    run.reuses_map = !is_leader;
    run.attention.workers = options.workers;
    run.attention.position_table = position_table.empty() ? nullptr : &position_table;
    if (options.gates) run.attention.gates = (*options.gates)[static_cast<std::size_t>(l)];
    if (is_leader) {
      group_maps.clear();
      maps_owner = -1;
      if (stores) run.attention.maps_out = &group_maps;
      if (options.counter) ++options.counter->maps_computed;
    } else {
      if (maps_owner != leader) {
        throw InvariantError("layer " + std::to_string(l) + " reuses the map of layer " +
                             std::to_string(leader) + ", which has not run");
      }
      run.attention.shared_maps = &group_maps;
      if (options.counter) ++options.counter->maps_reused;
    }
    h = detail::layer_forward(h, layer, cfg, run);
    if (stores) maps_owner = l;
    if (schedule && schedule->group_end(l) == l) {
      group_maps.clear();
      maps_owner = -1;
    }
  }
  return h;
}

}  // namespace atnb
