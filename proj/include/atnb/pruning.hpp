#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atnb/layers.hpp"

namespace atnb {

enum class GateMode { stochastic, deterministic };

inline constexpr float kDefaultGateTemperature = 2.0f / 3.0f;

// Per-head gate logits for a whole stack, row-major L×H.
struct GateSet {
  int layers = 0;
  int heads = 0;
  std::vector<float> log_alpha;
  float temperature = kDefaultGateTemperature;
  GateMode mode = GateMode::stochastic;
  float lambda = 0.0f;

  static GateSet uniform(int layers, int heads, float log_alpha, float lambda = 0.0f,
                         float temperature = kDefaultGateTemperature);

  float& logit(int layer, int head) { return log_alpha[index(layer, head)]; }
  float logit(int layer, int head) const { return log_alpha[index(layer, head)]; }
  std::size_t size() const { return log_alpha.size(); }
  // Gates whose deterministic value is 1.
  int open_count() const;
  void validate() const;

 private:
  std::size_t index(int layer, int head) const {
    return static_cast<std::size_t>(layer) * static_cast<std::size_t>(heads) +
           static_cast<std::size_t>(head);
  }
};

// sigmoid((log u - log(1-u) + log_alpha) / β) in stochastic mode; in
// deterministic mode 1 when sigmoid(log_alpha) > 0.5, else 0 (u ignored).
float binconcrete_gate(float log_alpha, float u, float temperature,
                       GateMode mode = GateMode::stochastic);

// One gate value per head, using noise[i] for gate i (row-major L×H).
LayerGates sample_gates(const GateSet& gates, std::span<const float> noise);
LayerGates deterministic_gates(const GateSet& gates);

// (H/Σg)·Σ_h g_h·SA_h·W_O_h + b_O; b_O on every row when Σg = 0.
Matrix gated_mhsa(const Matrix& x, const AttentionWeights& weights, std::span<const float> gates,
                  const ModelConfig& config);

// Mean of sigmoid(log_alpha) over all gates: the expected open fraction.
double sparsity_loss(const GateSet& gates);
double total_loss(double task_loss, const GateSet& gates);

struct TaskBatch {
  std::vector<Matrix> inputs;
  std::vector<Matrix> targets;
};

// Self-distillation target: the ungated output of a frozen teacher (the
// unpruned model). Batches are a pure function of (seed, step).
class SyntheticTask {
 public:
  SyntheticTask(const ModelWeights& teacher, std::uint64_t seed, int batch_size = 2,
                int length = 16);

  TaskBatch batch(int step) const;
  // Mean squared error of the gated model against the batch targets.
  double loss(const ModelWeights& model, const TaskBatch& batch, const LayerGates& gates) const;

  int batch_size() const { return batch_size_; }
  int length() const { return length_; }

 private:
  const ModelWeights* teacher_;
  std::uint64_t seed_;
  int batch_size_;
  int length_;
};

struct GateTrainingOptions {
  int steps = 100;
  double learning_rate = 20.0;
  std::uint64_t seed = 0;
  double fd_step = 1e-2;  // central-difference half width on log_alpha
};

struct GateTrainingStep {
  int step;
  double sparsity_loss;
  int open_gates;
  double task_loss;
};

// Central-difference gradient of total_loss w.r.t. every log_alpha, using the
// same noise draws for the + and - evaluations.
std::vector<double> estimate_gate_gradient(const ModelWeights& model, const GateSet& gates,
                                           const SyntheticTask& task, const TaskBatch& batch,
                                           std::span<const float> noise, double fd_step);

// Noise u ∈ (0,1) for every gate at a given step.
std::vector<float> gate_noise(const GateSet& gates, std::uint64_t seed, int step);

// Gradient descent on log_alpha; the model stays frozen. Throws DomainError
// with the step index if the loss turns non-finite.
GateSet train_gates(const ModelWeights& model, GateSet gates, const SyntheticTask& task,
                    const GateTrainingOptions& options,
                    std::vector<GateTrainingStep>* log = nullptr);

// Physically removes heads whose gate is 0 (their projections, memory slots,
// positional columns and W_O rows) and folds H/H_kept into the kept W_O rows.
// Gates must be in deterministic mode.
ModelWeights prune_heads(const ModelWeights& model, const GateSet& gates);
ModelWeights prune_heads(const ModelWeights& model, const LayerGates& binary_gates);

double sparsity_ratio(std::size_t pruned, std::size_t total);

// Number of closed (deterministic) gates per layer.
std::vector<int> pruned_per_layer(const GateSet& gates);

}  // namespace atnb
