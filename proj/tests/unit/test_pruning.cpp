#include <cmath>
#include <cstdio>
#include <random>

#include "atnb/error.hpp"
#include "atnb/profile.hpp"
#include "atnb/pruning.hpp"
#include "doctest.h"
#include "oracle.hpp"

using atnb::GateMode;
using atnb::GateSet;
using atnb::LayerKind;
using atnb::Matrix;
using atnb::ModelConfig;

namespace {

ModelConfig toy(LayerKind kind, int layers = 2, int dim = 32, int heads = 4) {
  ModelConfig c;
  c.layer_kind = kind;
  c.num_layers = layers;
  c.dim = dim;
  c.heads = heads;
  c.ff_mult = 2;
  c.conv_kernel = 3;
  c.persistent_slots = kind == LayerKind::all_attention ? 4 : 0;
  return c;
}

std::string percent(double ratio) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * ratio);
  return buf;
}

}  // namespace

TEST_SUITE("pruning") {

TEST_CASE("binconcrete gate formula") {
  const float beta = 2.0f / 3.0f;
  CHECK(atnb::binconcrete_gate(0.0f, 0.5f, beta) == doctest::Approx(0.5));
  const double u = 0.2, la = 1.3;
  const double want = 1.0 / (1.0 + std::exp(-(std::log(u) - std::log(1 - u) + la) / beta));
  CHECK(atnb::binconcrete_gate(static_cast<float>(la), static_cast<float>(u), beta) == doctest::Approx(want));
  // Lower temperature pushes the same draw towards {0, 1}.
  CHECK(atnb::binconcrete_gate(1.0f, 0.5f, 0.1f) > atnb::binconcrete_gate(1.0f, 0.5f, 1.0f));
  CHECK_THROWS_AS(atnb::binconcrete_gate(0.0f, 0.0f, beta), atnb::DomainError);
  CHECK_THROWS_AS(atnb::binconcrete_gate(0.0f, 1.0f, beta), atnb::DomainError);
  CHECK_THROWS_AS(atnb::binconcrete_gate(0.0f, 0.5f, 0.0f), atnb::DomainError);
}

TEST_CASE("deterministic gates threshold sigmoid(log_alpha) at one half") {
  CHECK(atnb::binconcrete_gate(0.1f, 0.0f, 0.5f, GateMode::deterministic) == 1.0f);
  CHECK(atnb::binconcrete_gate(-0.1f, 0.0f, 0.5f, GateMode::deterministic) == 0.0f);
  CHECK(atnb::binconcrete_gate(0.0f, 0.0f, 0.5f, GateMode::deterministic) == 0.0f);
  GateSet g = GateSet::uniform(2, 3, 1.0f);
  g.logit(1, 2) = -1.0f;
  const auto det = atnb::deterministic_gates(g);
  CHECK(det[0] == atnb::Vector{1, 1, 1});
  CHECK(det[1] == atnb::Vector{1, 1, 0});
  CHECK(g.open_count() == 5);
  CHECK(atnb::pruned_per_layer(g) == std::vector<int>{0, 1});
}

TEST_CASE("gated mhsa matches the scaled sum over heads") {
  std::mt19937_64 rng(12);
  for (auto kind : {LayerKind::transformer, LayerKind::conformer, LayerKind::all_attention}) {
    const ModelConfig c = toy(kind, 1, 16, 4);
    const auto w = atnb::init_weights(c);
    const Matrix x = oracle::random(6, 16, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> g(4);
      atnb::Vector gf(4);
      for (int h = 0; h < 4; ++h) gf[h] = static_cast<float>(g[h] = u(rng));
      CHECK(oracle::relative_error(atnb::gated_mhsa(x, w.layers[0].attention, gf, c),
                                   oracle::mhsa(oracle::to_grid(x), w.layers[0].attention, c.causal(), g)) < 1e-5);
    }
  }
}

TEST_CASE("open gates reproduce plain mhsa bitwise") {
  const ModelConfig c = toy(LayerKind::all_attention, 1, 16, 4);
  const auto w = atnb::init_weights(c);
  std::mt19937_64 rng(1);
  const Matrix x = oracle::random(5, 16, rng);
  CHECK(atnb::bitwise_equal(atnb::gated_mhsa(x, w.layers[0].attention, atnb::Vector(4, 1.0f), c),
                            atnb::mhsa(x, w.layers[0].attention, c)));
}

TEST_CASE("a uniform gate value cancels against the H/sum scaling") {
  const ModelConfig c = toy(LayerKind::transformer, 1, 16, 4);
  const auto w = atnb::init_weights(c);
  std::mt19937_64 rng(2);
  const Matrix x = oracle::random(5, 16, rng);
  const Matrix plain = atnb::mhsa(x, w.layers[0].attention, c);
  for (float v : {0.25f, 0.5f, 1.0f}) {
    CHECK(oracle::relative_error(atnb::gated_mhsa(x, w.layers[0].attention, atnb::Vector(4, v), c), plain) < 1e-6);
  }
}

TEST_CASE("all gates closed gives the output bias") {
  const ModelConfig c = toy(LayerKind::transformer, 1, 16, 4);
  auto w = atnb::init_weights(c);
  for (std::size_t i = 0; i < 16; ++i) w.layers[0].attention.b_o[i] = static_cast<float>(i);
  const Matrix out = atnb::gated_mhsa(Matrix(3, 16), w.layers[0].attention, atnb::Vector(4, 0.0f), c);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t i = 0; i < 16; ++i) CHECK(out(r, i) == static_cast<float>(i));
}

TEST_CASE("gate values are range and shape checked") {
  const ModelConfig c = toy(LayerKind::transformer, 1, 16, 4);
  const auto w = atnb::init_weights(c);
  CHECK_THROWS_AS(atnb::gated_mhsa(Matrix(2, 16), w.layers[0].attention, atnb::Vector{1, 1, 1, 1.5f}, c),
                  atnb::DomainError);
  CHECK_THROWS_AS(atnb::gated_mhsa(Matrix(2, 16), w.layers[0].attention, atnb::Vector{1, 1}, c), atnb::ShapeError);
}

TEST_CASE("pruned model matches the gated model") {
  std::mt19937_64 rng(21);
  for (auto kind : {LayerKind::transformer, LayerKind::conformer, LayerKind::all_attention}) {
    CAPTURE(atnb::to_string(kind));
    const ModelConfig c = toy(kind, 3, 32, 4);
    const auto w = atnb::init_weights(c);
    const Matrix x = oracle::random(10, 32, rng);
    for (int trial = 0; trial < 8; ++trial) {
      atnb::LayerGates gates(3, atnb::Vector(4));
      for (auto& layer : gates) {
        for (float& g : layer) g = static_cast<float>(rng() % 2);
        layer[rng() % 4] = 1.0f;
      }
      atnb::ForwardOptions options;
      options.gates = &gates;
      CHECK(oracle::relative_error(atnb::forward(atnb::prune_heads(w, gates), x), atnb::forward(w, x, options)) <
            1e-5);
    }
  }
}

TEST_CASE("removing one head deletes exactly its parameters") {
  for (auto kind : {LayerKind::transformer, LayerKind::all_attention, LayerKind::conformer}) {
    CAPTURE(atnb::to_string(kind));
    const ModelConfig c = toy(kind, 2, 32, 4);
    const auto w = atnb::init_weights(c);
    atnb::LayerGates gates(2, atnb::Vector(4, 1.0f));
    gates[1][2] = 0.0f;
    const auto before = atnb::count_params(w);
    const auto after = atnb::count_params(atnb::prune_heads(w, gates));
    const std::size_t d = 32, dh = 8, n = static_cast<std::size_t>(c.persistent_slots);
    std::size_t weights = 3 * d * dh + dh * d + 2 * n * dh;
    if (kind == LayerKind::conformer) weights += d * dh;  // positional columns
    std::size_t removed_weights = 0, removed_biases = 0;
    for (std::size_t k = 0; k < atnb::kParamCategoryCount; ++k) {
      removed_weights += before.counts[k].weights - after.counts[k].weights;
      removed_biases += before.counts[k].biases - after.counts[k].biases;
    }
    CHECK(removed_weights == weights);
    CHECK(removed_biases == 3 * dh);
  }
}

TEST_CASE("pruning every head of a layer leaves the output bias") {
  const ModelConfig c = toy(LayerKind::all_attention, 2, 32, 4);
  const auto w = atnb::init_weights(c);
  atnb::LayerGates gates{atnb::Vector(4, 0.0f), atnb::Vector(4, 1.0f)};
  const auto pruned = atnb::prune_heads(w, gates);
  CHECK(pruned.layers[0].attention.heads.empty());
  CHECK(pruned.layers[0].attention.w_o.rows() == 0);
  std::mt19937_64 rng(3);
  const Matrix x = oracle::random(4, 32, rng);
  atnb::ForwardOptions options;
  options.gates = &gates;
  CHECK(oracle::relative_error(atnb::forward(pruned, x), atnb::forward(w, x, options)) < 1e-6);
}

TEST_CASE("prune_heads input checks") {
  const ModelConfig c = toy(LayerKind::transformer, 2, 32, 4);
  const auto w = atnb::init_weights(c);
  CHECK_THROWS_AS(atnb::prune_heads(w, atnb::LayerGates(1, atnb::Vector(4, 1.0f))), atnb::ShapeError);
  CHECK_THROWS_AS(atnb::prune_heads(w, atnb::LayerGates(2, atnb::Vector(4, 0.5f))), atnb::DomainError);
  GateSet g = GateSet::uniform(2, 4, 1.0f);
  CHECK_THROWS_AS(atnb::prune_heads(w, g), atnb::DomainError);
  g.mode = GateMode::deterministic;
  CHECK(atnb::bitwise_equal(atnb::prune_heads(w, g), w));  // nothing closed
}

TEST_CASE("sparsity loss is the mean open probability") {
  GateSet g = GateSet::uniform(1, 2, 0.0f, 0.5f);
  g.log_alpha = {0.0f, std::log(3.0f)};
  CHECK(atnb::sparsity_loss(g) == doctest::Approx((0.5 + 0.75) / 2));
  CHECK(atnb::total_loss(2.0, g) == doctest::Approx(2.0 + 0.5 * 0.625));
}

TEST_CASE("sparsity ratios print like the pruning table") {
  CHECK(percent(atnb::sparsity_ratio(69, 128)) == "53.9");
  CHECK(percent(atnb::sparsity_ratio(22, 128)) == "17.2");
  CHECK(atnb::sparsity_ratio(0, 128) == 0.0);
  CHECK_THROWS_AS(atnb::sparsity_ratio(0, 0), atnb::DomainError);
  CHECK_THROWS_AS(atnb::sparsity_ratio(5, 4), atnb::DomainError);
}

TEST_CASE("synthetic task targets come from the ungated teacher") {
  const ModelConfig c = toy(LayerKind::all_attention, 2, 16, 2);
  const auto w = atnb::init_weights(c);
  const atnb::SyntheticTask task(w, 7, 2, 8);
  const auto batch = task.batch(3);
  REQUIRE(batch.inputs.size() == 2);
  CHECK(atnb::bitwise_equal(batch.targets[1], atnb::forward(w, batch.inputs[1])));
  CHECK(atnb::bitwise_equal(task.batch(3).inputs[0], batch.inputs[0]));
  CHECK_FALSE(atnb::bitwise_equal(task.batch(4).inputs[0], batch.inputs[0]));
  const atnb::LayerGates open(2, atnb::Vector(2, 1.0f));
  CHECK(task.loss(w, batch, open) == 0.0);
}

TEST_CASE("gate gradient agrees with a finer step and with a direct difference") {
  const ModelConfig c = toy(LayerKind::all_attention, 2, 16, 2);
  const auto w = atnb::init_weights(c);
  const atnb::SyntheticTask task(w, 1, 1, 8);
  GateSet g = GateSet::uniform(2, 2, 0.0f, 0.05f);
  g.log_alpha = {0.7f, -0.4f, 1.2f, 0.1f};
  const auto batch = task.batch(0);
  const auto noise = atnb::gate_noise(g, 3, 0);
  const auto coarse = atnb::estimate_gate_gradient(w, g, task, batch, noise, 1e-2);
  const auto fine = atnb::estimate_gate_gradient(w, g, task, batch, noise, 1e-3);
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    CHECK(fine[i] == doctest::Approx(coarse[i]).epsilon(1e-2));
  }
  // The sparsity term alone: λ·σ'(a)/n.
  GateSet quiet = g;
  quiet.lambda = 1.0f;
  const atnb::SyntheticTask same(w, 1, 1, 8);
  const auto with_task = atnb::estimate_gate_gradient(w, quiet, same, batch, noise, 1e-2);
  const auto without = atnb::estimate_gate_gradient(w, g, same, batch, noise, 1e-2);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(g.log_alpha[i])));
    CHECK(with_task[i] - without[i] == doctest::Approx(0.95 * s * (1 - s) / 4).epsilon(1e-3));
  }
}

TEST_CASE("gate noise is reproducible and inside (0, 1)") {
  const GateSet g = GateSet::uniform(4, 4, 0.0f);
  const auto a = atnb::gate_noise(g, 9, 2);
  CHECK(a == atnb::gate_noise(g, 9, 2));
  CHECK(a != atnb::gate_noise(g, 9, 3));
  for (float u : a) CHECK((u > 0.0f && u < 1.0f));
}

TEST_CASE("training without sparsity pressure keeps every gate open") {
  const ModelConfig c = toy(LayerKind::all_attention, 2, 16, 2);
  const auto w = atnb::init_weights(c);
  const atnb::SyntheticTask task(w, 0, 1, 8);
  atnb::GateTrainingOptions options;
  options.steps = 15;
  std::vector<atnb::GateTrainingStep> log;
  const GateSet trained = atnb::train_gates(w, GateSet::uniform(2, 2, 2.0f, 0.0f), task, options, &log);
  CHECK(trained.open_count() == 4);
  CHECK(log.size() == 16);
  CHECK(log.front().step == 0);
  CHECK(log.back().step == 15);
  const GateSet again = atnb::train_gates(w, GateSet::uniform(2, 2, 2.0f, 0.0f), task, options);
  CHECK(again.log_alpha == trained.log_alpha);
}

TEST_CASE("strong sparsity pressure closes gates") {
  const ModelConfig c = toy(LayerKind::all_attention, 2, 16, 2);
  const auto w = atnb::init_weights(c);
  const atnb::SyntheticTask task(w, 0, 1, 8);
  atnb::GateTrainingOptions options;
  options.steps = 40;
  const GateSet trained = atnb::train_gates(w, GateSet::uniform(2, 2, 2.0f, 5.0f), task, options);
  CHECK(trained.open_count() == 0);
}

TEST_CASE("divergence is reported with the step") {
  const ModelConfig c = toy(LayerKind::all_attention, 1, 16, 2);
  const auto w = atnb::init_weights(c);
  const atnb::SyntheticTask task(w, 0, 1, 4);
  atnb::GateTrainingOptions options;
  options.steps = 3;
  options.learning_rate = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(atnb::train_gates(w, GateSet::uniform(1, 2, 0.0f, 0.5f), task, options),
                       doctest::Contains("step"), atnb::DomainError);
}

TEST_CASE("gate set validation") {
  GateSet g = GateSet::uniform(2, 2, 0.0f);
  g.log_alpha.pop_back();
  CHECK_THROWS_AS(g.validate(), atnb::ShapeError);
  CHECK_THROWS_AS(GateSet::uniform(2, 2, 0.0f, -1.0f), atnb::DomainError);
  CHECK_THROWS_AS(GateSet::uniform(0, 2, 0.0f), atnb::ConfigError);
}

}  // TEST_SUITE
