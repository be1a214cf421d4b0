#include "atnb/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "atnb/error.hpp"
#include "atnb/pruning.hpp"
#include "atnb/reuse.hpp"

namespace atnb {

namespace {

double max_relative_error(const Matrix& got, const Matrix& want) {
  if (got.rows() != want.rows() || got.cols() != want.cols()) {
    return std::numeric_limits<double>::infinity();
  }
  double scale = 0.0;
  for (float v : want.data()) scale = std::max(scale, std::abs(static_cast<double>(v)));
  scale = std::max(scale, 1e-12);
  double worst = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(got.data()[i]) - want.data()[i]) / scale);
  }
  return worst;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

VerifyCheck tolerance_check(std::string name, double worst, double tol) {
  return {std::move(name), worst <= tol, "max relative error " + fmt(worst) + " (tolerance " + fmt(tol) + ")"};
}

ModelConfig toy_config(const ModelConfig& base, int layers, int dim, int heads) {
  ModelConfig c = base;
  c.num_layers = layers;
  c.dim = dim;
  c.heads = heads;
  c.value_mult = 1;
  c.conv_kernel = std::min(base.conv_kernel, 7);
  if (c.layer_kind == LayerKind::all_attention) c.persistent_slots = std::clamp(base.persistent_slots, 1, 8);
  return c;
}

std::vector<VerifyCheck> tensor_checks() {
  std::vector<VerifyCheck> out;
  {
    const Matrix c = matmul(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{5, 6}, {7, 8}}));
    out.push_back(tolerance_check("tensor: matmul 2x2", max_relative_error(c, Matrix::from_rows({{19, 22}, {43, 50}})), 0.0));
  }
  {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    double worst = 0.0;
    for (std::size_t n : {1u, 5u, 37u, 130u}) {
      Matrix a(n, n + 3), b(n + 3, 2 * n + 1);
      for (float& v : a.data()) v = u(rng);
      for (float& v : b.data()) v = u(rng);
      Matrix ref(n, 2 * n + 1);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
          double s = 0.0;
          for (std::size_t k = 0; k < a.cols(); ++k) s += static_cast<double>(a(i, k)) * b(k, j);
          ref(i, j) = static_cast<float>(s);
        }
      worst = std::max(worst, max_relative_error(matmul(a, b), ref));
    }
    out.push_back(tolerance_check("tensor: matmul vs triple loop", worst, 1e-5));
  }
  {
    const Matrix s = softmax_rows(Matrix::from_rows({{0.0f, std::log(2.0f)}}));
    out.push_back(tolerance_check("tensor: softmax", max_relative_error(s, Matrix::from_rows({{1.0f / 3, 2.0f / 3}})), 1e-6));
  }
  {
    const Vector gain{1, 1}, bias{0, 0};
    const Matrix n = layer_norm(Matrix::from_rows({{1, 3}}), gain, bias);
    out.push_back(tolerance_check("tensor: layer_norm", max_relative_error(n, Matrix::from_rows({{-1, 1}})), 1e-5));
  }
  {
    const Matrix y = depthwise_conv1d(Matrix::from_rows({{1}, {2}, {3}}), Matrix::from_rows({{1}, {1}, {1}}));
    out.push_back(tolerance_check("tensor: depthwise conv", max_relative_error(y, Matrix::from_rows({{3}, {6}, {5}})), 0.0));
  }
  return out;
}

VerifyCheck mhsa_check(const ModelConfig& base, std::uint64_t seed) {
  double worst = 0.0;
  int instance = 0;
  for (int heads : {1, 2, 4}) {
    for (int length : {1, 3, 8}) {
      ModelConfig c = toy_config(base, 1, 16, heads);
      c.seed = seed + static_cast<std::uint64_t>(instance);
      const ModelWeights w = init_weights(c);
      const Matrix x = random_matrix(static_cast<std::size_t>(length), 16, seed * 31 + static_cast<std::uint64_t>(instance));
      worst = std::max(worst, max_relative_error(mhsa(x, w.layers[0].attention, c),
                                                 naive_mhsa(x, w.layers[0].attention, c)));
      ++instance;
    }
  }
  return tolerance_check("mhsa: brute-force equivalence (" + std::string(to_string(base.layer_kind)) + ")", worst, 1e-5);
}

std::vector<VerifyCheck> reuse_checks(const ModelConfig& config, std::uint64_t seed) {
  std::vector<VerifyCheck> out;
  ModelConfig base = config;
  base.value_mult = 1;
  const ModelWeights w = init_weights(base);
  const Matrix x = random_matrix(16, static_cast<std::size_t>(base.dim), seed);
  const ReuseSchedule identity = parse_reuse_config("1x" + std::to_string(base.num_layers), base.num_layers);
  ForwardOptions options;
  options.schedule = &identity;
  const Matrix plain = forward(w, x);
  const Matrix scheduled = forward(w, x, options);
  AttentionCounter counter;
  const Matrix via_reuse = reuse_forward(w, identity, x, counter);
  out.push_back({"reuse: 1x" + std::to_string(base.num_layers) + " bitwise identical to baseline",
                 bitwise_equal(plain, scheduled) && bitwise_equal(plain, via_reuse), ""});

  std::ostringstream detail;
  bool exact = true;
  for (int a = 1; a <= base.num_layers; a *= 2) {
    if (base.num_layers % a != 0) continue;
    const int b = base.num_layers / a;
    const ReuseSchedule s = parse_reuse_config(std::to_string(a) + "x" + std::to_string(b), base.num_layers);
    ModelConfig small = base;
    small.dim = base.heads * 4;
    const ModelWeights rw = build_reuse_model(small, s);
    AttentionCounter count;
    reuse_forward(rw, s, random_matrix(8, static_cast<std::size_t>(small.dim), seed + 1), count);
    const bool ok = count.maps_computed == static_cast<std::size_t>(b) &&
                    count.maps_reused == static_cast<std::size_t>(base.num_layers - b);
    exact = exact && ok;
    detail << s.to_string() << ":" << count.maps_computed << "/" << count.maps_reused << " ";
  }
  out.push_back({"reuse: attention-map counts", exact, "computed/reused " + detail.str()});
  return out;
}

std::vector<VerifyCheck> gate_checks(const ModelConfig& config, std::uint64_t seed) {
  std::vector<VerifyCheck> out;
  const ModelConfig c = toy_config(config, 2, 32, 4);
  const ModelWeights w = init_weights(c);
  const Matrix x = random_matrix(12, 32, seed + 5);
  std::mt19937_64 rng(seed);

  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    LayerGates gates(2, Vector(4, 0.0f));
    for (auto& layer : gates) {
      for (float& g : layer) g = static_cast<float>(rng() & 1u);
      layer[rng() % 4] = 1.0f;
    }
    ForwardOptions options;
    options.gates = &gates;
    worst = std::max(worst, max_relative_error(forward(prune_heads(w, gates), x), forward(w, x, options)));
  }
  out.push_back(tolerance_check("pruning: pruned forward matches gated forward", worst, 1e-4));

  worst = 0.0;
  const AttentionWeights& attn = w.layers[0].attention;
  const Matrix ungated = mhsa(x, attn, c);
  for (float v : {0.25f, 0.5f, 1.0f}) {
    const Vector g(4, v);
    worst = std::max(worst, max_relative_error(gated_mhsa(x, attn, g, c), ungated));
  }
  out.push_back(tolerance_check("pruning: uniform gate scaling cancels", worst, 1e-5));
  return out;
}

VerifyCheck richardson_check(const ModelConfig& config, std::uint64_t seed) {
  ModelConfig c = toy_config(config, 2, 16, 2);
  const ModelWeights w = init_weights(c);
  const SyntheticTask task(w, seed, 1, 8);
  GateSet gates = GateSet::uniform(2, 2, 0.0f, 0.01f);
  std::mt19937_64 rng(seed + 3);
  std::uniform_real_distribution<float> u(-1.5f, 1.5f);
  for (float& a : gates.log_alpha) a = u(rng);
  const TaskBatch batch = task.batch(0);
  const std::vector<float> noise = gate_noise(gates, seed, 0);
  const auto coarse = estimate_gate_gradient(w, gates, task, batch, noise, 1e-2);
  const auto fine = estimate_gate_gradient(w, gates, task, batch, noise, 1e-3);
  std::size_t agree = 0;
  for (std::size_t i = 0; i < coarse.size(); ++i) {
    const double scale = std::max({std::abs(coarse[i]), std::abs(fine[i]), 1e-9});
    agree += std::abs(coarse[i] - fine[i]) <= 1e-2 * scale ? 1 : 0;
  }
  const double share = static_cast<double>(agree) / static_cast<double>(coarse.size());
  return {"pruning: gate gradient stable under step refinement", share >= 0.95,
          std::to_string(agree) + "/" + std::to_string(coarse.size()) + " coordinates within 1e-2"};
}

}  // namespace

Matrix naive_mhsa(const Matrix& x, const AttentionWeights& weights, const ModelConfig& config) {
  const std::size_t t = x.rows(), d = x.cols();
  const std::size_t heads = weights.heads.size();
  if (heads == 0) {
    Matrix out(t, d);
    add_row_bias(out, weights.b_o);
    return out;
  }
  const std::size_t dh = weights.heads.front().w_q.cols();
  const std::size_t vw = weights.heads.front().w_v.cols();
  auto project = [&](const Matrix& w, const Vector& b, std::size_t i, std::size_t c) {
    double s = b.empty() ? 0.0 : b[c];
    for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(x(i, k)) * w(k, c);
    return s;
  };
  Matrix table, pos;
  if (!weights.w_pos.empty()) {
    table = relative_position_table(t, d);
    pos = Matrix(table.rows(), d);
    for (std::size_t r = 0; r < table.rows(); ++r)
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < d; ++k) s += static_cast<double>(table(r, k)) * weights.w_pos(k, c);
        pos(r, c) = static_cast<float>(s);
      }
  }
  std::vector<double> concat(t * heads * vw, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const HeadWeights& hw = weights.heads[h];
    const std::size_t slots = hw.mem_k.rows();
    const std::size_t keys = t + slots;
    auto key = [&](std::size_t j, std::size_t c) {
      return j < t ? project(hw.w_k, hw.b_k, j, c) : static_cast<double>(hw.mem_k(j - t, c));
    };
    auto value = [&](std::size_t j, std::size_t c) {
      return j < t ? project(hw.w_v, hw.b_v, j, c) : static_cast<double>(hw.mem_v(j - t, c));
    };
    for (std::size_t i = 0; i < t; ++i) {
      std::vector<double> logit(keys, -std::numeric_limits<double>::infinity());
      for (std::size_t j = 0; j < keys; ++j) {
        if (config.causal() && j < t && j > i) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) {
          const double q = project(hw.w_q, hw.b_q, i, c);
          s += q * key(j, c);
          if (!pos.empty() && j < t) s += q * pos(i + t - 1 - j, h * dh + c);
        }
        logit[j] = s / std::sqrt(static_cast<double>(dh));
      }
      const double top = *std::max_element(logit.begin(), logit.end());
      double z = 0.0;
      for (double& l : logit) z += (l = std::exp(l - top));
      for (std::size_t c = 0; c < vw; ++c) {
        double s = 0.0;
        for (std::size_t j = 0; j < keys; ++j) s += logit[j] / z * value(j, c);
        concat[(i * heads + h) * vw + c] = s;
      }
    }
  }
  Matrix out(t, d);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double s = weights.b_o[c];
      for (std::size_t r = 0; r < heads * vw; ++r) s += concat[i * heads * vw + r] * weights.w_o(r, c);
      out(i, c) = static_cast<float>(s);
    }
  return out;
}

std::vector<VerifyCheck> run_verify(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::vector<VerifyCheck> out = tensor_checks();
  for (LayerKind kind : {LayerKind::transformer, LayerKind::conformer, LayerKind::all_attention}) {
    ModelConfig c = config;
    c.layer_kind = kind;
    if (kind == LayerKind::all_attention) c.persistent_slots = std::max(config.persistent_slots, 4);
    else c.persistent_slots = 0;
    out.push_back(mhsa_check(c, seed));
  }
  for (auto& check : reuse_checks(config, seed)) out.push_back(std::move(check));
  for (auto& check : gate_checks(config, seed)) out.push_back(std::move(check));
  out.push_back(richardson_check(config, seed));
  return out;
}

}  // namespace atnb
