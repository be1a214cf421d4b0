// Acceptance checks 1-13. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "atnb/config_io.hpp"
#include "atnb/profile.hpp"
#include "atnb/pruning.hpp"
#include "atnb/reuse.hpp"
#include "oracle.hpp"

#ifndef ATNB_CLI_PATH
#error "ATNB_CLI_PATH must name the CLI executable"
#endif

namespace {

using atnb::LayerKind;
using atnb::Matrix;
using atnb::ModelConfig;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

const std::vector<std::string> kSchedules{"1x16", "2x8", "4x4", "8x2"};

ModelConfig conformer_m() { return atnb::preset_config("conformer-m").model; }

ModelConfig all_attention_toy() {
  ModelConfig c = atnb::preset_config("allattention-lm").model;
  c.dim = 64;
  c.persistent_slots = 8;
  return c;
}

// Random non-zero biases so the oracle comparisons exercise them.
void randomize_biases(atnb::ModelWeights& w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-0.5f, 0.5f);
  for (auto& layer : w.layers) {
    atnb::for_each_tensor(layer, w.config, [&](const atnb::TensorSlot& slot) {
      if (slot.is_bias && slot.category != atnb::ParamCategory::ln) {
        for (float& v : *slot.vector) v = u(rng);
      }
    });
  }
}

Outcome c1_normalization() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int call = 0; call < 1000; ++call) {
    const std::size_t t = 1 + rng() % 64, dh = 1 + rng() % 32;
    const Matrix q = oracle::random(t, dh, rng, 4.0);
    const Matrix k = oracle::random(t, dh, rng, 4.0);
    const Matrix a = atnb::attention_map(q, k);
    for (std::size_t i = 0; i < t; ++i) {
      double sum = 0.0;
      for (float v : a.row(i)) sum += v;
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return {worst <= 1e-5, fmt("1000 maps, T<=64, d_h<=32: max |row sum - 1| = %.2e", worst)};
}

Outcome c2_mhsa_oracle() {
  std::mt19937_64 rng(2);
  const LayerKind kinds[] = {LayerKind::transformer, LayerKind::conformer, LayerKind::all_attention};
  double worst = 0.0;
  for (int instance = 0; instance < 200; ++instance) {
    ModelConfig c;
    c.layer_kind = kinds[instance % 3];
    c.num_layers = 1;
    c.heads = 1 << (rng() % 3);
    c.dim = c.heads * static_cast<int>(1 + rng() % static_cast<unsigned>(16 / c.heads));
    c.persistent_slots = c.layer_kind == LayerKind::all_attention ? static_cast<int>(1 + rng() % 4) : 0;
    c.seed = rng();
    auto w = atnb::init_weights(c);
    randomize_biases(w, rng);
    const std::size_t t = 1 + rng() % 8;
    const Matrix x = oracle::random(t, static_cast<std::size_t>(c.dim), rng, 2.0);
    const auto& attn = w.layers[0].attention;
    worst = std::max(worst, oracle::relative_error(atnb::mhsa(x, attn, c), oracle::mhsa(oracle::to_grid(x), attn, c.causal())));
  }
  return {worst <= 1e-5, fmt("200 instances, T<=8, d<=16, H in {1,2,4}: max relative error %.2e", worst)};
}

Outcome c3_reuse_degeneracy() {
  const ModelConfig c = conformer_m();
  const auto w = atnb::init_weights(c);
  const Matrix x = atnb::random_matrix(128, 256, 3);
  const auto s = atnb::parse_reuse_config("1x16", 16);
  atnb::AttentionCounter counter;
  const Matrix base = atnb::forward(w, x);
  const bool same = atnb::bitwise_equal(atnb::reuse_forward(w, s, x, counter), base);
  atnb::AttentionCounter counter2;
  const bool built_same = atnb::bitwise_equal(atnb::reuse_forward(atnb::build_reuse_model(c, s), s, x, counter2), base);
  return {same && built_same, fmt("conformer-m, T=128: 1x16 on shared weights %s, 1x16-built model %s",
                                  same ? "bitwise identical" : "DIFFERS", built_same ? "bitwise identical" : "DIFFERS")};
}

Outcome c4_attention_counts() {
  const ModelConfig c = conformer_m();
  const Matrix x = atnb::random_matrix(16, 256, 4);
  const std::size_t expected[] = {16, 8, 4, 2};
  bool ok = true;
  std::string detail = "maps computed per forward:";
  for (std::size_t i = 0; i < kSchedules.size(); ++i) {
    const auto s = atnb::parse_reuse_config(kSchedules[i], 16);
    atnb::AttentionCounter counter;
    atnb::reuse_forward(atnb::build_reuse_model(c, s), s, x, counter);
    ok = ok && counter.maps_computed == expected[i] && counter.maps_computed + counter.maps_reused == 16;
    detail += fmt(" %s=%zu", kSchedules[i].c_str(), counter.maps_computed);
  }
  return {ok, detail};
}

Outcome c5_reuse_speedup() {
  const ModelConfig c = conformer_m();
  atnb::BenchOptions o;
  o.lengths = {1024};
  o.repeats = 20;
  o.warmup = 1;
  o.threads = 1;
  std::vector<double> medians;
  std::string detail = "T=1024, 1 thread, median of 20 (ms):";
  for (const auto& text : kSchedules) {
    const auto s = atnb::parse_reuse_config(text, 16);
    const auto report = atnb::bench_forward(atnb::build_reuse_model(c, s), o);
    const auto* row = report.find(1024, "total");
    if (!row || !row->error.empty()) return {false, text + " failed at T=1024"};
    medians.push_back(row->median_ms);
    detail += fmt(" %s=%.1f", text.c_str(), row->median_ms);
  }
  bool decreasing = true;
  for (std::size_t i = 1; i < medians.size(); ++i) decreasing = decreasing && medians[i] < medians[i - 1];
  const double ratio = medians[2] / medians[0];
  detail += fmt("; strictly decreasing: %s; 4x4/1x16 = %.3f (bound 0.75)", decreasing ? "yes" : "no", ratio);
  return {decreasing && ratio <= 0.75, detail};
}

Outcome c6_breakdown() {
  const auto w = atnb::init_weights(conformer_m());
  atnb::BenchOptions o;
  o.lengths = {256, 512, 1024};
  o.repeats = 7;
  o.warmup = 1;
  const auto report = atnb::breakdown_latency(w, o);
  auto ms = [&](int t, const char* name) {
    const auto* row = report.find(t, name);
    return row && row->error.empty() ? row->median_ms : std::nan("");
  };
  const double sa_ratio = ms(1024, "SA") / ms(512, "SA");
  const double ff_ratio = ms(1024, "FF") / ms(512, "FF");
  std::vector<double> share;
  std::string overhead;
  bool sums_close = true;
  for (int t : o.lengths) {
    double parts = 0.0;
    for (const char* name : {"FF", "Conv", "SA", "Norm"}) parts += ms(t, name);
    share.push_back(ms(t, "SA") / parts);
    const double gap = parts / ms(t, "total") - 1.0;
    sums_close = sums_close && std::abs(gap) <= 0.10;
    overhead += fmt(" %d:%+.1f%%", t, 100.0 * gap);
  }
  const bool share_up = share[0] < share[1] && share[1] < share[2];
  const bool ok = sa_ratio >= 3.0 && sa_ratio <= 5.0 && ff_ratio >= 1.6 && ff_ratio <= 2.4 && share_up && sums_close;
  return {ok, fmt("SA t(1024)/t(512) = %.2f [3,5]; FF ratio = %.2f [1.6,2.4]; SA share %.1f%% -> %.1f%% -> %.1f%%; "
                  "parts vs total (10%% bound):%s",
                  sa_ratio, ff_ratio, 100 * share[0], 100 * share[1], 100 * share[2], overhead.c_str())};
}

Outcome c7_param_shares() {
  const ModelConfig c = conformer_m();
  const auto formula = atnb::count_params(c);
  const auto weights = atnb::init_weights(c);
  const auto live = atnb::count_params(weights);
  const double ff = formula.fraction(atnb::ParamCategory::ff);
  const double sa = formula.fraction(atnb::ParamCategory::sa);
  const long long mismatch = static_cast<long long>(formula.total()) - static_cast<long long>(weights.scalar_count());
  const bool per_category = formula == live;
  const bool ok = std::abs(ff - 0.66) <= 0.02 && std::abs(sa - 0.21) <= 0.02 && mismatch == 0 && per_category;
  return {ok, fmt("FF %.4f (0.66 +- 0.02), SA %.4f (0.21 +- 0.02); %zu parameters, count mismatch %lld, "
                  "per-category %s",
                  ff, sa, formula.total(), mismatch, per_category ? "equal" : "DIFFER")};
}

Outcome c8_pruned_equivalence() {
  const ModelConfig c = all_attention_toy();
  std::mt19937_64 rng(8);
  auto w = atnb::init_weights(c);
  randomize_biases(w, rng);
  const Matrix x = atnb::random_matrix(16, 64, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    atnb::LayerGates gates(16, atnb::Vector(8));
    for (auto& layer : gates) {
      for (float& g : layer) g = static_cast<float>(rng() & 1u);
      layer[rng() % 8] = 1.0f;
    }
    atnb::ForwardOptions options;
    options.gates = &gates;
    worst = std::max(worst, oracle::relative_error(atnb::forward(atnb::prune_heads(w, gates), x),
                                                   atnb::forward(w, x, options)));
  }
  return {worst <= 1e-4, fmt("all-attention L=16 H=8 d=64 N=8 T=16, 50 assignments: max relative error %.2e", worst)};
}

Outcome c9_scaling_identity() {
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (auto c : {all_attention_toy(), conformer_m()}) {
    c.num_layers = 1;
    auto w = atnb::init_weights(c);
    randomize_biases(w, rng);
    const auto& attn = w.layers[0].attention;
    const Matrix x = atnb::random_matrix(16, static_cast<std::size_t>(c.dim), rng());
    const Matrix plain = atnb::mhsa(x, attn, c);
    for (float v : {0.25f, 0.5f, 1.0f}) {
      worst = std::max(worst, oracle::relative_error(atnb::gated_mhsa(x, attn, atnb::Vector(attn.heads.size(), v), c), plain));
    }
  }
  return {worst <= 1e-5, fmt("c in {0.25, 0.5, 1.0}, all-attention and conformer heads: max relative error %.2e", worst)};
}

Outcome c10_sparsity_monotone() {
  ModelConfig c;
  c.layer_kind = LayerKind::all_attention;
  c.num_layers = 4;
  c.dim = 32;
  c.heads = 4;
  c.persistent_slots = 8;
  c.seed = 10;
  const auto w = atnb::init_weights(c);
  const atnb::SyntheticTask task(w, 10);
  atnb::GateTrainingOptions options;
  options.steps = 300;
  options.seed = 10;
  std::vector<int> open;
  std::string detail = "d=32 L=4 H=4, 300 steps, open gates:";
  for (float lambda : {0.0f, 0.01f, 0.05f, 0.2f}) {
    const auto trained = atnb::train_gates(w, atnb::GateSet::uniform(4, 4, 2.0f, lambda), task, options);
    open.push_back(trained.open_count());
    detail += fmt(" lambda=%g:%d", lambda, open.back());
  }
  bool ok = open[0] == 16;
  for (std::size_t i = 1; i < open.size(); ++i) ok = ok && open[i] <= open[i - 1];
  return {ok, detail};
}

Outcome c11_pruning_speedup() {
  const auto w = atnb::init_weights(atnb::preset_config("allattention-lm").model);
  atnb::LayerGates gates(16, atnb::Vector{1, 1, 1, 1, 0, 0, 0, 0});
  const auto pruned = atnb::prune_heads(w, gates);
  atnb::BenchOptions o;
  o.lengths = {512};
  o.repeats = 10;
  o.warmup = 2;
  const double full = atnb::bench_forward(w, o).rows.at(0).median_ms;
  const double half = atnb::bench_forward(pruned, o).rows.at(0).median_ms;
  const double ratio = half / full;
  return {ratio <= 0.75, fmt("allattention-lm T=512: unpruned %.1f ms, 64/128 heads removed %.1f ms, ratio %.3f "
                             "(bound 0.75)",
                             full, half, ratio)};
}

Outcome c12_sparsity_values() {
  const std::string a = fmt("%.1f", 100.0 * atnb::sparsity_ratio(69, 128));
  const std::string b = fmt("%.1f", 100.0 * atnb::sparsity_ratio(22, 128));
  return {a == "53.9" && b == "17.2", "69/128 -> " + a + "%, 22/128 -> " + b + "%"};
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::vector<std::string> cells(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream in(line);
  for (std::string cell; std::getline(in, cell, ',');) out.push_back(cell);
  return out;
}

bool is_number(const std::string& s) {
  char* end = nullptr;
  std::strtod(s.c_str(), &end);
  return !s.empty() && end == s.c_str() + s.size();
}

Outcome c13_table_emission() {
  const auto dir = std::filesystem::temp_directory_path() / "atnb_acceptance";
  std::filesystem::create_directories(dir);
  const auto reuse_cfg = dir / "reuse.cfg";
  const auto prune_cfg = dir / "prune.cfg";
  std::ofstream(reuse_cfg) << "layer_kind = conformer\nnum_layers = 16\ndim = 32\nheads = 4\nconv_kernel = 7\n";
  std::ofstream(prune_cfg) << "layer_kind = all_attention\nnum_layers = 16\ndim = 32\nheads = 4\npersistent_slots = 8\n";
  const std::string cli = ATNB_CLI_PATH;
  const std::string reuse_cmd = cli + " reuse --config " + reuse_cfg.string() +
                                " --schedules 1x16,2x8,4x4,8x2 --lengths 128..1024 --repeats 5 --warmup 1 --out " +
                                (dir / "reuse.csv").string() + " 2>/dev/null";
  const std::string prune_cmd = cli + " prune --config " + prune_cfg.string() + " --lambda 0.02 --steps 2 --out " +
                                (dir / "prune.csv").string() + " 2>/dev/null";
  if (std::system(reuse_cmd.c_str()) != 0) return {false, "reuse subcommand failed"};
  if (std::system(prune_cmd.c_str()) != 0) return {false, "prune subcommand failed"};

  std::string problems;
  const auto records = read_lines(dir / "reuse.csv");
  if (records.empty() || records[0] != atnb::kLatencyCsvHeader) problems += " long CSV header;";
  std::set<std::pair<std::string, std::string>> grid;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto f = cells(records[i]);
    if (f.size() != 9 || f[5] != "total" || !is_number(f[6])) problems += " bad record;";
    else grid.insert({f[1], f[4]});
  }
  if (records.size() != 33 || grid.size() != 32) problems += fmt(" %zu records/%zu cells;", records.size() - 1, grid.size());

  const auto table = read_lines(dir / "reuse.table.csv");
  if (table.size() != 5 || table[0] != "config,128,256,384,512,640,768,896,1024") problems += " wide table header/rows;";
  for (std::size_t i = 1; i < table.size(); ++i) {
    const auto f = cells(table[i]);
    if (f.size() != 9 || f[0] != kSchedules[i - 1]) problems += " wide table row;";
    for (std::size_t j = 1; j < f.size(); ++j)
      if (!is_number(f[j])) problems += " non-numeric cell;";
  }

  const auto pruned = read_lines(dir / "prune.table.csv");
  std::string header = "lambda";
  for (int l = 1; l <= 16; ++l) header += "," + std::to_string(l);
  header += ",sparsity";
  if (pruned.size() != 2 || pruned[0] != header) problems += " prune table header;";
  if (pruned.size() == 2) {
    const auto f = cells(pruned[1]);
    if (f.size() != 18 || f[0] != "0.02") problems += " prune row shape;";
    for (std::size_t j = 1; j + 1 < f.size(); ++j)
      if (f[j].empty() || f[j].find_first_not_of("0123456789") != std::string::npos) problems += " layer count;";
    if (f.size() == 18 && (!is_number(f[17]) || f[17].find('.') != f[17].size() - 2)) problems += " sparsity cell;";
  }
  const auto trajectory = read_lines(dir / "prune.csv");
  if (trajectory.empty() || trajectory[0] != "lambda,step,sparsity_loss,open_gates,task_loss") problems += " trajectory header;";

  if (!problems.empty()) return {false, "problems:" + problems};
  return {true, "reuse: 32 total records (4 schedules x 8 lengths) + 4x8 wide grid; prune: lambda + 16 layer columns + "
                "sparsity"};
}

struct Criterion {
  int id;
  const char* title;
  double limit_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {1, "attention normalization", 5, c1_normalization},
      {2, "MHSA brute-force equivalence", 10, c2_mhsa_oracle},
      {3, "reuse 1x16 degeneracy", 0, c3_reuse_degeneracy},
      {4, "attention-count exactness", 0, c4_attention_counts},
      {5, "reuse speedup direction", 300, c5_reuse_speedup},
      {6, "quadratic vs linear breakdown", 300, c6_breakdown},
      {7, "parameter shares", 0, c7_param_shares},
      {8, "gated/pruned equivalence", 0, c8_pruned_equivalence},
      {9, "scaling-compensation identity", 0, c9_scaling_identity},
      {10, "sparsity monotonicity", 600, c10_sparsity_monotone},
      {11, "pruning speedup direction", 300, c11_pruning_speedup},
      {12, "sparsity-ratio values", 0, c12_sparsity_values},
      {13, "table emission fidelity", 0, c13_table_emission},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.contains(c.id)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (c.limit_s > 0 && seconds >= c.limit_s) {
      o.passed = false;
      o.detail += fmt("; runtime %.1f s exceeds %.0f s", seconds, c.limit_s);
    }
    failed += o.passed ? 0 : 1;
    std::printf("[%s] %2d %s: %s (%.1f s)\n", o.passed ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), seconds);
    std::fflush(stdout);
  }
  std::printf("%s\n", failed == 0 ? "all criteria passed" : fmt("%d criteria failed", failed).c_str());
  return failed == 0 ? 0 : 1;
}
