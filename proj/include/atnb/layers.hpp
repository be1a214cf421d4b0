#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <type_traits>
#include <vector>

#include "atnb/schedule.hpp"
#include "atnb/tensor.hpp"

namespace atnb {

enum class LayerKind { transformer, conformer, all_attention };

LayerKind parse_layer_kind(std::string_view name);
std::string_view to_string(LayerKind kind);

struct ModelConfig {
  LayerKind layer_kind = LayerKind::conformer;
  int num_layers = 16;
  int dim = 256;
  int heads = 4;
  int ff_mult = 4;
  int conv_kernel = 31;
  int persistent_slots = 0;  // all_attention only
  Activation activation = Activation::swish;
  int value_mult = 1;  // 2 only for reuse models
  std::uint64_t seed = 0;

  int head_dim() const { return dim / heads; }
  int value_width() const { return value_mult * head_dim(); }
  // All-attention is an autoregressive LM; the other kinds run unmasked.
  bool causal() const { return layer_kind == LayerKind::all_attention; }
  int ff_count() const;
  int norm_count() const;

  // Throws ConfigError on any violated constraint.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Per-head attention parameters. Reuse followers carry no query/key
// projections (w_q and w_k are empty).
struct HeadWeights {
  Matrix w_q, w_k, w_v;
  Vector b_q, b_k, b_v;
  Matrix mem_k, mem_v;  // persistent memory, N×d_h and N×value_width

  bool computes_map() const { return !w_q.empty(); }
  friend bool operator==(const HeadWeights&, const HeadWeights&) = default;
};

struct AttentionWeights {
  std::vector<HeadWeights> heads;
  // Rows are grouped per head: rows [h·vw, (h+1)·vw) form W_O of head h.
  Matrix w_o;
  Vector b_o;
  Matrix w_pos;  // conformer leaders only, d×(heads·d_h), columns grouped per head

  std::size_t head_count() const { return heads.size(); }
  friend bool operator==(const AttentionWeights&, const AttentionWeights&) = default;
};

struct FeedForwardWeights {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  friend bool operator==(const FeedForwardWeights&, const FeedForwardWeights&) = default;
};

// Conformer convolution block: pointwise d→2d, GLU, depthwise k, swish,
// pointwise d→d.
struct ConvWeights {
  Matrix pw1;
  Vector pb1;
  Matrix depthwise;  // k×d
  Vector db;
  Matrix pw2;
  Vector pb2;
  friend bool operator==(const ConvWeights&, const ConvWeights&) = default;
};

struct NormParams {
  Vector gain, bias;
  friend bool operator==(const NormParams&, const NormParams&) = default;
};

// Norm slots by layer kind:
//   transformer:   {after MHSA, after FF}
//   conformer:     {pre FF1, pre MHSA, pre conv, pre FF2, final}
//   all_attention: {after attention}
struct LayerWeights {
  AttentionWeights attention;
  std::vector<FeedForwardWeights> ff;
  std::optional<ConvWeights> conv;
  std::vector<NormParams> norms;
  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct ModelWeights {
  ModelConfig config;
  std::vector<LayerWeights> layers;
  std::optional<ReuseSchedule> schedule;

  std::size_t scalar_count() const;
  friend bool operator==(const ModelWeights&, const ModelWeights&) = default;
};

bool bitwise_equal(const ModelWeights& a, const ModelWeights& b);

enum class ParamCategory { ff, sa, conv, ln, persistent_memory };
inline constexpr std::size_t kParamCategoryCount = 5;
std::string_view to_string(ParamCategory category);

template <typename M, typename V>
struct BasicTensorSlot {
  ParamCategory category;
  bool is_bias;  // biases and LN offsets; LN gains are not biases
  std::size_t fan_in;  // 0 for LN gains/offsets
  M* matrix;
  V* vector;

  std::size_t size() const { return matrix ? matrix->size() : vector->size(); }
};
using TensorSlot = BasicTensorSlot<Matrix, Vector>;
using ConstTensorSlot = BasicTensorSlot<const Matrix, const Vector>;

// Visits every parameter tensor of a layer in the fixed traversal order used
// by initialization and the weight file:
//   w_pos, per head (w_q b_q w_k b_k w_v b_v mem_k mem_v), w_o, b_o,
//   each FF (w1 b1 w2 b2), conv (pw1 pb1 depthwise db pw2 pb2), norms.
template <typename Layer, typename Fn>
void for_each_tensor(Layer& layer, const ModelConfig& config, Fn&& fn) {
  constexpr bool kConst = std::is_const_v<Layer>;
  using Slot = std::conditional_t<kConst, ConstTensorSlot, TensorSlot>;
  const auto d = static_cast<std::size_t>(config.dim);
  const auto dh = static_cast<std::size_t>(config.head_dim());
  auto& attn = layer.attention;
  fn(Slot{ParamCategory::sa, false, d, &attn.w_pos, nullptr});
  for (auto& head : attn.heads) {
    fn(Slot{ParamCategory::sa, false, d, &head.w_q, nullptr});
    fn(Slot{ParamCategory::sa, true, d, nullptr, &head.b_q});
    fn(Slot{ParamCategory::sa, false, d, &head.w_k, nullptr});
    fn(Slot{ParamCategory::sa, true, d, nullptr, &head.b_k});
    fn(Slot{ParamCategory::sa, false, d, &head.w_v, nullptr});
    fn(Slot{ParamCategory::sa, true, d, nullptr, &head.b_v});
    fn(Slot{ParamCategory::persistent_memory, false, dh, &head.mem_k, nullptr});
    fn(Slot{ParamCategory::persistent_memory, false, dh, &head.mem_v, nullptr});
  }
  fn(Slot{ParamCategory::sa, false, attn.w_o.rows(), &attn.w_o, nullptr});
  fn(Slot{ParamCategory::sa, true, attn.w_o.rows(), nullptr, &attn.b_o});
  for (auto& ff : layer.ff) {
    fn(Slot{ParamCategory::ff, false, d, &ff.w1, nullptr});
    fn(Slot{ParamCategory::ff, true, d, nullptr, &ff.b1});
    fn(Slot{ParamCategory::ff, false, ff.w2.rows(), &ff.w2, nullptr});
    fn(Slot{ParamCategory::ff, true, ff.w2.rows(), nullptr, &ff.b2});
  }
  if (layer.conv) {
    auto& conv = *layer.conv;
    fn(Slot{ParamCategory::conv, false, d, &conv.pw1, nullptr});
    fn(Slot{ParamCategory::conv, true, d, nullptr, &conv.pb1});
    fn(Slot{ParamCategory::conv, false, conv.depthwise.rows(), &conv.depthwise, nullptr});
    fn(Slot{ParamCategory::conv, true, conv.depthwise.rows(), nullptr, &conv.db});
    fn(Slot{ParamCategory::conv, false, d, &conv.pw2, nullptr});
    fn(Slot{ParamCategory::conv, true, d, nullptr, &conv.pb2});
  }
  for (auto& norm : layer.norms) {
    fn(Slot{ParamCategory::ln, false, 0, nullptr, &norm.gain});
    fn(Slot{ParamCategory::ln, true, 0, nullptr, &norm.bias});
  }
}

// Deterministic in config.seed. Linear weights are uniform in
// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero, LN gain 1 and offset 0.
// value_mult must be 1; widened models come from build_reuse_model.
ModelWeights init_weights(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Forward pass.

struct AttentionCounter {
  std::size_t maps_computed = 0;
  std::size_t maps_reused = 0;
};

enum class Submodule { ff, conv, sa, reuse_sa, norm };
inline constexpr std::size_t kSubmoduleCount = 5;
std::string_view to_string(Submodule submodule);

// Wall time accumulated per submodule when a forward runs instrumented.
struct SubmoduleTimes {
  std::array<double, kSubmoduleCount> seconds{};
  double& operator[](Submodule s) { return seconds[static_cast<std::size_t>(s)]; }
  double operator[](Submodule s) const { return seconds[static_cast<std::size_t>(s)]; }
};

// Per-layer gate values, one entry per head present in that layer.
using LayerGates = std::vector<Vector>;

struct ForwardOptions {
  int workers = 1;
  const ReuseSchedule* schedule = nullptr;
  const LayerGates* gates = nullptr;
  AttentionCounter* counter = nullptr;
  SubmoduleTimes* times = nullptr;
};

struct QkvProjection {
  Matrix q, k, v;  // q and k are empty for map-free heads
};

QkvProjection project_qkv(const Matrix& x, const AttentionWeights& weights, std::size_t head);

// softmax(Q·Kᵀ / sqrt(d_h)).
Matrix attention_map(const Matrix& q, const Matrix& k);

// Concat_h(A_h V_h)·W_O + b_O. Maps follow the config: causal masking and
// persistent memory for all_attention, the relative-position logit term when
// w_pos is present.
Matrix mhsa(const Matrix& x, const AttentionWeights& weights, const ModelConfig& config);

Matrix feed_forward(const Matrix& x, const FeedForwardWeights& weights, Activation activation);

Matrix conv_module(const Matrix& x, const ConvWeights& weights);

// Single layers, each computing its own attention maps.
Matrix transformer_layer(const Matrix& x, const LayerWeights& weights, const ModelConfig& config);
Matrix conformer_layer(const Matrix& x, const LayerWeights& weights, const ModelConfig& config);
Matrix all_attention_layer(const Matrix& x, const LayerWeights& weights,
                           const ModelConfig& config);

// Runs the stack. With options.schedule set, members reuse their leader's
// maps; without it every layer computes its own.
Matrix forward(const ModelWeights& weights, const Matrix& x, const ForwardOptions& options = {});

// Fixed sinusoidal table of relative offsets -(T-1)..(T-1), (2T-1)×d.
Matrix relative_position_table(std::size_t length, std::size_t dim);

// Uniform [-1, 1) matrix from a seed; used for benchmark and test inputs.
Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, float scale = 1.0f);

}  // namespace atnb
