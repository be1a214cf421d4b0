#include "atnb/pruning.hpp"

#include <cmath>
#include <random>

#include "atnb/error.hpp"
#include "attention_internal.hpp"

namespace atnb {

GateSet GateSet::uniform(int layers, int heads, float log_alpha, float lambda, float temperature) {
  GateSet g;
  g.layers = layers;
  g.heads = heads;
  g.log_alpha.assign(static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads), log_alpha);
  g.lambda = lambda;
  g.temperature = temperature;
  g.validate();
  return g;
}

void GateSet::validate() const {
  if (layers <= 0 || heads <= 0) throw ConfigError("gate set needs positive layers and heads");
  if (log_alpha.size() != static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads)) {
    throw ShapeError("gate set holds " + std::to_string(log_alpha.size()) + " logits for " +
                     std::to_string(layers) + "x" + std::to_string(heads) + " heads");
  }
  if (!(temperature > 0.0f)) throw DomainError("gate temperature must be positive");
  if (!(lambda >= 0.0f)) throw DomainError("sparsity coefficient must be non-negative");
}

int GateSet::open_count() const {
  int open = 0;
  for (float a : log_alpha) open += sigmoid(a) > 0.5f ? 1 : 0;
  return open;
}

float binconcrete_gate(float log_alpha, float u, float temperature, GateMode mode) {
  if (mode == GateMode::deterministic) return sigmoid(log_alpha) > 0.5f ? 1.0f : 0.0f;
  if (!(u > 0.0f && u < 1.0f)) {
    throw DomainError("binconcrete noise u = " + std::to_string(u) + " outside (0, 1)");
  }
  if (!(temperature > 0.0f)) throw DomainError("binconcrete temperature must be positive");
  return sigmoid((std::log(u) - std::log1p(-u) + log_alpha) / temperature);
}

LayerGates sample_gates(const GateSet& gates, std::span<const float> noise) {
  gates.validate();
  if (gates.mode == GateMode::stochastic && noise.size() != gates.size()) {
    throw ShapeError("gate noise of length " + std::to_string(noise.size()) + " for " +
                     std::to_string(gates.size()) + " gates");
  }
  LayerGates out(static_cast<std::size_t>(gates.layers));
  std::size_t i = 0;
  for (int l = 0; l < gates.layers; ++l) {
    auto& row = out[static_cast<std::size_t>(l)];
    row.resize(static_cast<std::size_t>(gates.heads));
    for (int h = 0; h < gates.heads; ++h, ++i) {
      const float u = gates.mode == GateMode::stochastic ? noise[i] : 0.5f;
      row[static_cast<std::size_t>(h)] =
          binconcrete_gate(gates.log_alpha[i], u, gates.temperature, gates.mode);
    }
  }
  return out;
}

LayerGates deterministic_gates(const GateSet& gates) {
  GateSet det = gates;
  det.mode = GateMode::deterministic;
  return sample_gates(det, {});
}

Matrix gated_mhsa(const Matrix& x, const AttentionWeights& weights, std::span<const float> gates,
                  const ModelConfig& config) {
  for (float g : gates) {
    if (!(g >= 0.0f && g <= 1.0f)) throw DomainError("gate value outside [0, 1]");
  }
  if (gates.size() != weights.heads.size()) {
    throw ShapeError("gated_mhsa: " + std::to_string(gates.size()) + " gates for " +
                     std::to_string(weights.heads.size()) + " heads");
  }
  detail::AttentionRun run;
  run.gates = gates;
  return detail::attention_block(x, weights, config, run);
}

double sparsity_loss(const GateSet& gates) {
  gates.validate();
  double total = 0.0;
  for (float a : gates.log_alpha) total += 1.0 / (1.0 + std::exp(-static_cast<double>(a)));
  return total / static_cast<double>(gates.size());
}

double total_loss(double task_loss, const GateSet& gates) {
  return task_loss + static_cast<double>(gates.lambda) * sparsity_loss(gates);
}

SyntheticTask::SyntheticTask(const ModelWeights& teacher, std::uint64_t seed, int batch_size,
                             int length)
    : teacher_(&teacher), seed_(seed), batch_size_(batch_size), length_(length) {
  if (batch_size <= 0 || length <= 0) {
    throw ConfigError("synthetic task needs positive batch size and length");
  }
}

TaskBatch SyntheticTask::batch(int step) const {
  TaskBatch b;
  const auto d = static_cast<std::size_t>(teacher_->config.dim);
  for (int i = 0; i < batch_size_; ++i) {
    const std::uint64_t s = seed_ * 0x9E3779B97F4A7C15ull +
                            static_cast<std::uint64_t>(step) * 1000003ull + static_cast<std::uint64_t>(i);
    b.inputs.push_back(random_matrix(static_cast<std::size_t>(length_), d, s));
    b.targets.push_back(forward(*teacher_, b.inputs.back()));
  }
  return b;
}

double SyntheticTask::loss(const ModelWeights& model, const TaskBatch& batch,
                           const LayerGates& gates) const {
  ForwardOptions options;
  options.gates = &gates;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const Matrix out = forward(model, batch.inputs[i], options);
    const auto a = out.data();
    const auto b = batch.targets[i].data();
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
      sum += diff * diff;
    }
    count += a.size();
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::vector<float> gate_noise(const GateSet& gates, std::uint64_t seed, int step) {
  std::mt19937_64 rng(seed ^ (0xD1B54A32D192ED03ull * (static_cast<std::uint64_t>(step) + 1)));
  std::vector<float> noise(gates.size());
  for (float& u : noise) {
    // (0, 1) exclusive: offset by half an ulp of the 24-bit grid.
    u = (static_cast<float>(rng() >> 40) + 0.5f) * 0x1p-24f;
  }
  return noise;
}

std::vector<double> estimate_gate_gradient(const ModelWeights& model, const GateSet& gates,
                                           const SyntheticTask& task, const TaskBatch& batch,
                                           std::span<const float> noise, double fd_step) {
  std::vector<double> grad(gates.size(), 0.0);
  GateSet probe = gates;
  probe.mode = GateMode::stochastic;
  for (std::size_t i = 0; i < gates.size(); ++i) {
    const float base = gates.log_alpha[i];
    probe.log_alpha[i] = static_cast<float>(base + fd_step);
    const double up = total_loss(task.loss(model, batch, sample_gates(probe, noise)), probe);
    probe.log_alpha[i] = static_cast<float>(base - fd_step);
    const double down = total_loss(task.loss(model, batch, sample_gates(probe, noise)), probe);
    probe.log_alpha[i] = base;
    // Divide by the realized float step so rounding of base±h does not bias it.
    const double span = static_cast<double>(static_cast<float>(base + fd_step)) -
                        static_cast<double>(static_cast<float>(base - fd_step));
    grad[i] = (up - down) / span;
  }
  return grad;
}

GateSet train_gates(const ModelWeights& model, GateSet gates, const SyntheticTask& task,
                    const GateTrainingOptions& options, std::vector<GateTrainingStep>* log) {
  gates.validate();
  if (gates.layers != model.config.num_layers) {
    throw ShapeError("gate set has " + std::to_string(gates.layers) + " layers, model has " +
                     std::to_string(model.config.num_layers));
  }
  for (const auto& layer : model.layers) {
    if (layer.attention.heads.size() != static_cast<std::size_t>(gates.heads)) {
      throw ShapeError("gate set expects " + std::to_string(gates.heads) + " heads per layer");
    }
  }
  if (options.steps < 0) throw ConfigError("steps must be non-negative");
  const GateMode requested = gates.mode;
  gates.mode = GateMode::stochastic;
  for (int step = 0; step < options.steps; ++step) {
    const TaskBatch batch = task.batch(step);
    const std::vector<float> noise = gate_noise(gates, options.seed, step);
    const double task_loss = task.loss(model, batch, sample_gates(gates, noise));
    const double loss = total_loss(task_loss, gates);
    if (!std::isfinite(loss)) {
      throw DomainError("gate training diverged: non-finite loss at step " + std::to_string(step));
    }
    if (log) log->push_back({step, sparsity_loss(gates), gates.open_count(), task_loss});
    const std::vector<double> grad =
        estimate_gate_gradient(model, gates, task, batch, noise, options.fd_step);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!std::isfinite(grad[i])) {
        throw DomainError("gate training diverged: non-finite gradient at step " +
                          std::to_string(step));
      }
      gates.log_alpha[i] -= static_cast<float>(options.learning_rate * grad[i]);
    }
  }
  if (log) {
    const TaskBatch batch = task.batch(options.steps);
    const double task_loss =
        task.loss(model, batch, sample_gates(gates, gate_noise(gates, options.seed, options.steps)));
    log->push_back({options.steps, sparsity_loss(gates), gates.open_count(), task_loss});
  }
  gates.mode = requested;
  return gates;
}

ModelWeights prune_heads(const ModelWeights& model, const LayerGates& binary_gates) {
  if (binary_gates.size() != model.layers.size()) {
    throw ShapeError("binary gates for " + std::to_string(binary_gates.size()) + " layers, model has " +
                     std::to_string(model.layers.size()));
  }
  ModelWeights pruned = model;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const AttentionWeights& src = model.layers[l].attention;
    const Vector& gates = binary_gates[l];
    if (gates.size() != src.heads.size()) {
      throw ShapeError("layer " + std::to_string(l) + ": " + std::to_string(gates.size()) +
                       " gates for " + std::to_string(src.heads.size()) + " heads");
    }
    std::vector<std::size_t> kept;
    for (std::size_t h = 0; h < gates.size(); ++h) {
      if (gates[h] != 0.0f && gates[h] != 1.0f) {
        throw DomainError("prune_heads needs binary gates, got " + std::to_string(gates[h]));
      }
      if (gates[h] == 1.0f) kept.push_back(h);
    }
    AttentionWeights& dst = pruned.layers[l].attention;
    const std::size_t width = src.heads.empty() ? 0 : src.w_o.rows() / src.heads.size();
    const std::size_t d = src.w_o.cols();
    dst.heads.clear();
    dst.w_o = Matrix(kept.size() * width, d);
    const std::size_t dh = static_cast<std::size_t>(model.config.head_dim());
    if (!src.w_pos.empty()) dst.w_pos = Matrix(src.w_pos.rows(), kept.size() * dh);
    const float scale = kept.empty() ? 1.0f
                                     : static_cast<float>(src.heads.size()) /
                                           static_cast<float>(kept.size());
    for (std::size_t i = 0; i < kept.size(); ++i) {
      dst.heads.push_back(src.heads[kept[i]]);
      if (!src.w_pos.empty()) set_column_block(dst.w_pos, i * dh, column_block(src.w_pos, kept[i] * dh, dh));
      for (std::size_t r = 0; r < width; ++r) {
        const auto from = src.w_o.row(kept[i] * width + r);
        auto to = dst.w_o.row(i * width + r);
        for (std::size_t c = 0; c < d; ++c) to[c] = from[c] * scale;
      }
    }
  }
  return pruned;
}

ModelWeights prune_heads(const ModelWeights& model, const GateSet& gates) {
  if (gates.mode != GateMode::deterministic) {
    throw DomainError("prune_heads needs gates in deterministic mode");
  }
  return prune_heads(model, deterministic_gates(gates));
}

double sparsity_ratio(std::size_t pruned, std::size_t total) {
  if (total == 0) throw DomainError("sparsity_ratio: total head count is zero");
  if (pruned > total) throw DomainError("sparsity_ratio: more pruned heads than heads");
  return static_cast<double>(pruned) / static_cast<double>(total);
}

std::vector<int> pruned_per_layer(const GateSet& gates) {
  const LayerGates det = deterministic_gates(gates);
  std::vector<int> counts;
  for (const auto& layer : det) {
    int closed = 0;
    for (float g : layer) closed += g == 0.0f ? 1 : 0;
    counts.push_back(closed);
  }
  return counts;
}

}  // namespace atnb
