// Command-line front end. Talks to the library only through atnb.h.
#include <atnb/atnb.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

// Carries an exit code out of a subcommand.
struct CliError {
  int code;
  std::string message;
};

void check(atnb_status status) {
  if (status == ATNB_OK) return;
  const int code = status == ATNB_ERR_CONFIG || status == ATNB_ERR_ARGUMENT ? kExitConfig : kExitFailure;
  throw CliError{code, std::string(atnb_status_name(status)) + ": " + atnb_last_error()};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Config = std::unique_ptr<atnb_config, Deleter<atnb_config, atnb_config_free>>;
using Model = std::unique_ptr<atnb_model, Deleter<atnb_model, atnb_model_free>>;
using Report = std::unique_ptr<atnb_report, Deleter<atnb_report, atnb_report_free>>;
using PruneResult = std::unique_ptr<atnb_prune_result, Deleter<atnb_prune_result, atnb_prune_result_free>>;
using VerifyResult = std::unique_ptr<atnb_verify_result, Deleter<atnb_verify_result, atnb_verify_result_free>>;

std::string take(char* text) {
  std::string out = text ? text : "";
  atnb_string_free(text);
  return out;
}

struct Common {
  std::string preset;
  std::string config_path;
  std::string reuse;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
  std::string format = "csv";
};

struct Timing {
  std::string lengths = "128..1024";
  int repeats = 20;
  int warmup = 3;
};

struct PruneFlags {
  std::vector<double> lambdas{0.01};
  int steps = 100;
  double lr = 0.0;
  double beta = 0.0;
  double init_logit = 0.0;
  int task_length = 0;
};

Config resolve_config(const Common& c) {
  if (!c.preset.empty() && !c.config_path.empty()) {
    throw CliError{kExitConfig, "give either --preset or --config, not both"};
  }
  atnb_config* raw = nullptr;
  if (!c.config_path.empty()) {
    check(atnb_config_load(c.config_path.c_str(), &raw));
  } else {
    check(atnb_config_preset(c.preset.empty() ? "conformer-m" : c.preset.c_str(), &raw));
  }
  Config config(raw);
  if (!c.reuse.empty()) check(atnb_config_set_reuse(config.get(), c.reuse.c_str()));
  if (c.seed) check(atnb_config_set_seed(config.get(), *c.seed));
  return config;
}

std::int64_t config_int(const atnb_config* config, const char* key) {
  std::int64_t v = 0;
  check(atnb_config_get(config, key, &v));
  return v;
}

// Resolved config and seed go to stderr so stdout stays machine-readable.
void echo_config(const atnb_config* config, const std::string& subcommand) {
  char* dump = nullptr;
  check(atnb_config_dump(config, &dump));
  std::istringstream lines(take(dump));
  std::cerr << "# atnb " << subcommand << "\n";
  for (std::string line; std::getline(lines, line);) std::cerr << "# " << line << "\n";
}

std::vector<int> parse_lengths(const std::string& text) {
  std::size_t count = 0;
  check(atnb_parse_lengths(text.c_str(), nullptr, 0, &count));
  std::vector<int> lengths(count);
  check(atnb_parse_lengths(text.c_str(), lengths.data(), lengths.size(), &count));
  return lengths;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream in(text);
  for (std::string item; std::getline(in, item, sep);) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Named artifacts. With --out the first goes to that path and the rest next
// to it as <stem>.<suffix>; without --out they are printed in order.
struct Artifact {
  std::string suffix;  // e.g. "json" or "table.csv"
  std::string body;
};

void emit(const Common& c, const std::vector<Artifact>& artifacts) {
  if (c.out.empty()) {
    for (std::size_t i = 0; i < artifacts.size(); ++i) {
      if (i > 0) std::cout << "\n";
      std::cout << artifacts[i].body;
    }
    std::cout.flush();
    return;
  }
  const std::filesystem::path primary(c.out);
  std::error_code ec;
  if (primary.has_parent_path()) std::filesystem::create_directories(primary.parent_path(), ec);
  for (std::size_t i = 0; i < artifacts.size(); ++i) {
    std::filesystem::path path = primary;
    if (i > 0) path = primary.parent_path() / (primary.stem().string() + "." + artifacts[i].suffix);
    std::ofstream f(path, std::ios::binary);
    f << artifacts[i].body;
    if (!f) throw CliError{kExitFailure, "cannot write " + path.string()};
    std::cerr << "# wrote " << path.string() << "\n";
  }
}

atnb_bench_options bench_options(const Common& c, const Timing& t, const std::vector<int>& lengths,
                                 std::uint64_t seed) {
  atnb_bench_options o = atnb_bench_defaults();
  o.lengths = lengths.data();
  o.length_count = lengths.size();
  o.repeats = t.repeats;
  o.warmup = t.warmup;
  o.threads = c.threads;
  o.seed = seed;
  return o;
}

std::vector<Artifact> report_artifacts(const atnb_report* report, const std::string& format) {
  char* csv = nullptr;
  char* json = nullptr;
  check(atnb_report_csv(report, &csv));
  check(atnb_report_json(report, &json));
  Artifact a{"csv", take(csv)};
  Artifact b{"json", take(json)};
  if (format == "json") return {b, a};
  return {a, b};
}

void report_failures(const atnb_report* report) {
  for (std::size_t i = 0; i < atnb_report_row_count(report); ++i) {
    atnb_latency_row row;
    check(atnb_report_row(report, i, &row));
    if (row.error[0] != '\0') std::cerr << "# T=" << row.length << " failed: " << row.error << "\n";
  }
}

int run_latency(const Common& c, const Timing& t, bool breakdown) {
  Config config = resolve_config(c);
  echo_config(config.get(), breakdown ? "breakdown" : "bench");
  const std::vector<int> lengths = parse_lengths(t.lengths);
  atnb_model* raw = nullptr;
  check(atnb_model_create(config.get(), &raw));
  Model model(raw);
  const atnb_bench_options o = bench_options(c, t, lengths, static_cast<std::uint64_t>(config_int(config.get(), "seed")));
  atnb_report* rep = nullptr;
  check(breakdown ? atnb_breakdown(model.get(), &o, &rep) : atnb_bench(model.get(), &o, &rep));
  Report report(rep);
  report_failures(report.get());
  emit(c, report_artifacts(report.get(), c.format));
  return kExitOk;
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

int run_params(const Common& c) {
  Config config = resolve_config(c);
  echo_config(config.get(), "params");
  atnb_param_counts counts;
  check(atnb_config_count_params(config.get(), &counts));
  std::uint64_t total = 0;
  for (int k = 0; k < ATNB_CATEGORY_COUNT; ++k) total += counts.weights[k] + counts.biases[k];
  std::ostringstream table;
  table << "submodule,fraction\n";
  for (int k = 0; k < ATNB_CATEGORY_COUNT; ++k) {
    const std::uint64_t n = counts.weights[k] + counts.biases[k];
    table << atnb_category_name(static_cast<atnb_category>(k)) << ","
          << fixed(total ? static_cast<double>(n) / static_cast<double>(total) : 0.0, 4) << "\n";
  }
  std::ostringstream detail;
  detail << "submodule,weights,biases\n";
  for (int k = 0; k < ATNB_CATEGORY_COUNT; ++k) {
    detail << atnb_category_name(static_cast<atnb_category>(k)) << "," << counts.weights[k] << ","
           << counts.biases[k] << "\n";
  }
  std::cerr << "# total parameters " << total << "\n";
  emit(c, {{"csv", table.str()}, {"counts.csv", detail.str()}});
  return kExitOk;
}

std::vector<std::string> default_schedules(int layers) {
  std::vector<std::string> out;
  for (int a : {1, 2, 4, 8}) {
    if (layers % a == 0) out.push_back(std::to_string(a) + "x" + std::to_string(layers / a));
  }
  return out;
}

int run_reuse(const Common& c, const Timing& t, const std::string& schedules_flag) {
  Config base = resolve_config(c);
  echo_config(base.get(), "reuse");
  const std::vector<int> lengths = parse_lengths(t.lengths);
  const int layers = static_cast<int>(config_int(base.get(), "num_layers"));
  const std::vector<std::string> schedules =
      schedules_flag.empty() ? default_schedules(layers) : split(schedules_flag, ',');
  std::cerr << "# schedules " << (schedules_flag.empty() ? "(default) " : "");
  for (const auto& s : schedules) std::cerr << s << " ";
  std::cerr << "\n";

  char* label_raw = nullptr;
  check(atnb_config_describe(base.get(), &label_raw));
  const std::string label = take(label_raw);
  const auto seed = static_cast<std::uint64_t>(config_int(base.get(), "seed"));

  std::ostringstream long_csv, long_json, table;
  long_csv << atnb_latency_csv_header() << "\n";
  long_json << "[";
  table << "config";
  for (int length : lengths) table << "," << length;
  table << "\n";
  for (std::size_t i = 0; i < schedules.size(); ++i) {
    atnb_config* raw = nullptr;
    check(atnb_config_clone(base.get(), &raw));
    Config config(raw);
    check(atnb_config_set_reuse(config.get(), schedules[i].c_str()));
    atnb_model* m = nullptr;
    check(atnb_model_create(config.get(), &m));
    Model model(m);
    atnb_bench_options o = bench_options(c, t, lengths, seed);
    o.label = label.c_str();
    atnb_report* rep = nullptr;
    check(atnb_bench(model.get(), &o, &rep));
    Report report(rep);
    report_failures(report.get());
    char* csv = nullptr;
    char* json = nullptr;
    check(atnb_report_csv(report.get(), &csv));
    check(atnb_report_json(report.get(), &json));
    const std::string body = take(csv);
    long_csv << body.substr(body.find('\n') + 1);
    long_json << (i ? "," : "") << take(json);
    table << schedules[i];
    for (int length : lengths) {
      std::string cell = "NA";
      for (std::size_t r = 0; r < atnb_report_row_count(report.get()); ++r) {
        atnb_latency_row row;
        check(atnb_report_row(report.get(), r, &row));
        if (row.length == length && std::string(row.submodule) == "total" && row.error[0] == '\0') {
          cell = fixed(row.median_ms, 2);
        }
      }
      table << "," << cell;
    }
    table << "\n";
    std::cerr << "# " << schedules[i] << " done\n";
  }
  long_json << "]\n";
  std::vector<Artifact> artifacts;
  if (c.format == "json") {
    artifacts = {{"json", long_json.str()}, {"table.csv", table.str()}, {"csv", long_csv.str()}};
  } else {
    artifacts = {{"csv", long_csv.str()}, {"table.csv", table.str()}, {"json", long_json.str()}};
  }
  emit(c, artifacts);
  return kExitOk;
}

int run_prune(const Common& c, const PruneFlags& p) {
  Config config = resolve_config(c);
  echo_config(config.get(), "prune");
  atnb_model* m = nullptr;
  check(atnb_model_create(config.get(), &m));
  Model model(m);
  const int layers = static_cast<int>(config_int(config.get(), "num_layers"));

  atnb_prune_options o = atnb_prune_defaults();
  o.steps = p.steps;
  if (p.lr > 0.0) o.learning_rate = p.lr;
  if (p.beta > 0.0) o.temperature = p.beta;
  if (p.init_logit != 0.0) o.initial_logit = p.init_logit;
  if (p.task_length > 0) o.task_length = p.task_length;
  o.seed = static_cast<std::uint64_t>(config_int(config.get(), "seed"));
  std::cerr << "# steps=" << o.steps << " lr=" << o.learning_rate << " beta=" << o.temperature
            << " init_logit=" << o.initial_logit << " seed=" << o.seed << "\n";

  std::ostringstream trajectory, table;
  trajectory << "lambda,step,sparsity_loss,open_gates,task_loss\n";
  table << "lambda";
  for (int l = 1; l <= layers; ++l) table << "," << l;
  table << ",sparsity\n";
  for (double lambda : p.lambdas) {
    o.lambda = lambda;
    atnb_prune_result* raw = nullptr;
    check(atnb_prune(model.get(), &o, &raw));
    PruneResult result(raw);
    for (std::size_t i = 0; i < atnb_prune_step_count(result.get()); ++i) {
      atnb_prune_step s;
      check(atnb_prune_step_at(result.get(), i, &s));
      trajectory << lambda << "," << s.step << "," << fixed(s.sparsity_loss, 6) << "," << s.open_gates
                 << "," << std::setprecision(8) << s.task_loss << "\n";
    }
    std::vector<int> pruned(atnb_prune_layer_count(result.get()));
    check(atnb_prune_layer_pruned(result.get(), pruned.data()));
    double ratio = 0.0;
    check(atnb_prune_sparsity(result.get(), &ratio));
    table << lambda;
    for (int n : pruned) table << "," << n;
    table << "," << fixed(100.0 * ratio, 1) << "\n";
    std::cerr << "# lambda=" << lambda << " sparsity=" << fixed(100.0 * ratio, 1) << "%\n";
  }
  emit(c, {{"csv", trajectory.str()}, {"table.csv", table.str()}});
  return kExitOk;
}

int run_verify(const Common& c) {
  Config config = resolve_config(c);
  echo_config(config.get(), "verify");
  atnb_verify_result* raw = nullptr;
  check(atnb_verify(config.get(), static_cast<std::uint64_t>(config_int(config.get(), "seed")), &raw));
  VerifyResult result(raw);
  std::ostringstream os;
  std::size_t failed = 0;
  for (std::size_t i = 0; i < atnb_verify_count(result.get()); ++i) {
    const char* name = nullptr;
    const char* detail = nullptr;
    int passed = 0;
    check(atnb_verify_check(result.get(), i, &name, &passed, &detail));
    os << (passed ? "PASS " : "FAIL ") << name;
    if (detail[0] != '\0') os << " (" << detail << ")";
    os << "\n";
    failed += passed ? 0 : 1;
  }
  os << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << "\n";
  emit(c, {{"txt", os.str()}});
  return atnb_verify_all_passed(result.get()) ? kExitOk : kExitFailure;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--preset", c.preset, "Model preset: conformer-m or allattention-lm");
  sub->add_option("--config", c.config_path, "Config file (key = value or JSON)");
  sub->add_option("--reuse", c.reuse, "Attention reuse schedule, e.g. 4x4");
  sub->add_option("--seed", c.seed, "Seed for weights, inputs and gate noise");
  sub->add_option("--threads", c.threads, "Worker threads in the timed kernels")->check(CLI::PositiveNumber);
  sub->add_option("--out", c.out, "Output path; companion files are written next to it");
  sub->add_option("--format", c.format, "Primary output format")->check(CLI::IsMember({"csv", "json"}));
}

void add_timing(CLI::App* sub, Timing& t) {
  sub->add_option("--lengths", t.lengths, "Lengths: a,b,c or a..b (steps of a) or a..b:x2");
  sub->add_option("--repeats", t.repeats, "Timed repeats per length (>= 5)");
  sub->add_option("--warmup", t.warmup, "Untimed warmup runs per length (>= 1)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention reuse and head-pruning benchmarks"};
  app.require_subcommand(1);
  Common common;
  Timing timing;
  PruneFlags prune;
  std::string schedules;

  auto* bench = app.add_subcommand("bench", "Total forward latency per sequence length");
  add_common(bench, common);
  add_timing(bench, timing);
  auto* breakdown = app.add_subcommand("breakdown", "Per-submodule latency per sequence length");
  add_common(breakdown, common);
  add_timing(breakdown, timing);
  auto* params = app.add_subcommand("params", "Parameter share of each submodule");
  add_common(params, common);
  auto* reuse = app.add_subcommand("reuse", "Latency grid over reuse schedules and lengths");
  add_common(reuse, common);
  add_timing(reuse, timing);
  reuse->add_option("--schedules", schedules, "Comma-separated schedules (default 1xL,2x..,4x..,8x..)");
  auto* prune_cmd = app.add_subcommand("prune", "Train head gates and report pruned heads per layer");
  add_common(prune_cmd, common);
  prune_cmd->add_option("--lambda", prune.lambdas, "Sparsity coefficient(s)")->delimiter(',');
  prune_cmd->add_option("--steps", prune.steps, "Gate training steps")->check(CLI::NonNegativeNumber);
  prune_cmd->add_option("--lr", prune.lr, "Learning rate on gate logits");
  prune_cmd->add_option("--beta", prune.beta, "BinConcrete temperature");
  prune_cmd->add_option("--init-logit", prune.init_logit, "Initial gate logit");
  prune_cmd->add_option("--task-length", prune.task_length, "Sequence length of the distillation task");
  auto* verify = app.add_subcommand("verify", "Equivalence and property checks");
  add_common(verify, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (bench->parsed()) return run_latency(common, timing, false);
    if (breakdown->parsed()) return run_latency(common, timing, true);
    if (params->parsed()) return run_params(common);
    if (reuse->parsed()) return run_reuse(common, timing, schedules);
    if (prune_cmd->parsed()) return run_prune(common, prune);
    if (verify->parsed()) return run_verify(common);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.message << "\n";
    return e.code;
  }
  return kExitConfig;
}
