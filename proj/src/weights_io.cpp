#include "atnb/weights_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "atnb/error.hpp"

namespace atnb {

namespace {

constexpr std::uint8_t kMagic[4] = {'A', 'T', 'N', 'B'};

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32s(std::span<const float> values) {
    for (float v : values) u32(std::bit_cast<std::uint32_t>(v));
  }
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::vector<float> f32s(std::size_t count) {
    need(count * 4);
    std::vector<float> out(count);
    for (float& v : out) v = std::bit_cast<float>(u32());
    return out;
  }
  void expect_magic() {
    need(4);
    for (std::uint8_t m : kMagic) {
      if (bytes_[pos_++] != m) throw IoError("not a weight file: bad magic");
    }
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("weight file truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

int to_int(std::uint32_t v, const char* what) {
  if (v > 1u << 30) throw IoError(std::string("weight file: implausible ") + what);
  return static_cast<int>(v);
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights) {
  const ModelConfig& c = weights.config;
  Writer w;
  w.raw(kMagic);
  w.u32(kWeightFormatVersion);
  w.u32(static_cast<std::uint32_t>(c.layer_kind));
  w.u32(static_cast<std::uint32_t>(c.num_layers));
  w.u32(static_cast<std::uint32_t>(c.dim));
  w.u32(static_cast<std::uint32_t>(c.heads));
  w.u32(static_cast<std::uint32_t>(c.ff_mult));
  w.u32(static_cast<std::uint32_t>(c.conv_kernel));
  w.u32(static_cast<std::uint32_t>(c.persistent_slots));
  w.u32(static_cast<std::uint32_t>(c.activation));
  w.u32(static_cast<std::uint32_t>(c.value_mult));
  w.u64(c.seed);
  if (weights.schedule) {
    w.u32(static_cast<std::uint32_t>(weights.schedule->group_count()));
    for (const auto& g : weights.schedule->groups()) {
      w.u32(static_cast<std::uint32_t>(g.leader));
      w.u32(static_cast<std::uint32_t>(g.size()));
    }
  } else {
    w.u32(0);
  }
  for (const auto& layer : weights.layers) {
    w.u32(static_cast<std::uint32_t>(layer.attention.heads.size()));
    for_each_tensor(layer, c, [&](const ConstTensorSlot& slot) {
      if (slot.matrix) {
        w.u32(static_cast<std::uint32_t>(slot.matrix->rows()));
        w.u32(static_cast<std::uint32_t>(slot.matrix->cols()));
        w.f32s(slot.matrix->data());
      } else {
        w.u32(slot.vector->empty() ? 0u : 1u);
        w.u32(static_cast<std::uint32_t>(slot.vector->size()));
        w.f32s(*slot.vector);
      }
    });
  }
  return w.take();
}

ModelWeights deserialize_weights(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.expect_magic();
  if (const std::uint32_t version = r.u32(); version != kWeightFormatVersion) {
    throw IoError("unsupported weight format version " + std::to_string(version));
  }
  ModelWeights weights;
  ModelConfig& c = weights.config;
  const std::uint32_t kind = r.u32();
  if (kind > 2) throw IoError("weight file: unknown layer kind " + std::to_string(kind));
  c.layer_kind = static_cast<LayerKind>(kind);
  c.num_layers = to_int(r.u32(), "layer count");
  c.dim = to_int(r.u32(), "dim");
  c.heads = to_int(r.u32(), "head count");
  c.ff_mult = to_int(r.u32(), "ff_mult");
  c.conv_kernel = to_int(r.u32(), "conv kernel");
  c.persistent_slots = to_int(r.u32(), "persistent slots");
  const std::uint32_t act = r.u32();
  if (act > 3) throw IoError("weight file: unknown activation " + std::to_string(act));
  c.activation = static_cast<Activation>(act);
  c.value_mult = to_int(r.u32(), "value_mult");
  c.seed = r.u64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw IoError(std::string("weight file: invalid config: ") + e.what());
  }

  if (const int groups = to_int(r.u32(), "group count"); groups > 0) {
    std::vector<ReuseGroup> list;
    for (int g = 0; g < groups; ++g) {
      ReuseGroup group{to_int(r.u32(), "group leader"), {}};
      const int size = to_int(r.u32(), "group size");
      for (int m = 1; m < size; ++m) group.members.push_back(group.leader + m);
      list.push_back(std::move(group));
    }
    weights.schedule = ReuseSchedule::from_groups(std::move(list), c.num_layers);
  }

  for (int l = 0; l < c.num_layers; ++l) {
    LayerWeights layer;
    layer.attention.heads.resize(static_cast<std::size_t>(to_int(r.u32(), "head count")));
    layer.ff.resize(static_cast<std::size_t>(c.ff_count()));
    if (c.layer_kind == LayerKind::conformer) layer.conv.emplace();
    layer.norms.resize(static_cast<std::size_t>(c.norm_count()));
    for_each_tensor(layer, c, [&](const TensorSlot& slot) {
      const auto rows = static_cast<std::size_t>(to_int(r.u32(), "rows"));
      const auto cols = static_cast<std::size_t>(to_int(r.u32(), "cols"));
      std::vector<float> data = r.f32s(rows * cols);
      if (slot.matrix) {
        *slot.matrix = Matrix(rows, cols, std::move(data));
      } else {
        if (rows > 1) throw IoError("weight file: vector stored with " + std::to_string(rows) + " rows");
        *slot.vector = std::move(data);
      }
    });
    weights.layers.push_back(std::move(layer));
  }
  if (!r.done()) throw IoError("weight file has trailing bytes");
  return weights;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_weights(weights);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

ModelWeights load_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize_weights(bytes);
}

}  // namespace atnb
