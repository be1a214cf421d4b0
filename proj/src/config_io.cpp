#include "atnb/config_io.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "atnb/error.hpp"
#include "json.hpp"

namespace atnb {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view text, const std::string& where) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError(where + ": '" + std::string(text) + "' is not a valid integer");
  }
  return value;
}

// Raw key/value pairs with the location each came from.
struct Entry {
  std::string value;
  std::string where;
};

RunConfig build(const std::map<std::string, Entry>& entries, std::string_view source) {
  RunConfig run;
  ModelConfig& m = run.model;
  std::optional<std::string> reuse, groups;
  bool value_mult_given = false;
  for (const auto& [key, entry] : entries) {
    const std::string& v = entry.value;
    const std::string& where = entry.where;
    try {
      if (key == "layer_kind") m.layer_kind = parse_layer_kind(v);
      else if (key == "num_layers") m.num_layers = parse_number<int>(v, where);
      else if (key == "dim") m.dim = parse_number<int>(v, where);
      else if (key == "heads") m.heads = parse_number<int>(v, where);
      else if (key == "ff_mult") m.ff_mult = parse_number<int>(v, where);
      else if (key == "conv_kernel") m.conv_kernel = parse_number<int>(v, where);
      else if (key == "persistent_slots") m.persistent_slots = parse_number<int>(v, where);
      else if (key == "activation") m.activation = parse_activation(v);
      else if (key == "value_mult") {
        m.value_mult = parse_number<int>(v, where);
        value_mult_given = true;
      } else if (key == "seed") m.seed = parse_number<std::uint64_t>(v, where);
      else if (key == "gate_seed") run.gate_seed = parse_number<std::uint64_t>(v, where);
      else if (key == "reuse") reuse = v;
      else if (key == "reuse_groups") groups = v;
      else throw ConfigError(where + ": unknown key '" + key + "'");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      if (msg.rfind(where, 0) == 0) throw;
      throw ConfigError(where + ": " + msg);
    }
  }
  if (m.layer_kind == LayerKind::all_attention && !entries.contains("activation")) {
    m.activation = Activation::relu;
  }
  if (reuse && groups) {
    throw ConfigError(std::string(source) + ": give either reuse or reuse_groups, not both");
  }
  try {
    if (reuse) run.schedule = parse_reuse_config(*reuse, m.num_layers);
    if (groups) run.schedule = parse_reuse_groups(*groups, m.num_layers);
  } catch (const ConfigError& e) {
    throw ConfigError(entries.at(reuse ? "reuse" : "reuse_groups").where + ": " + e.what());
  }
  const bool shares = run.schedule && run.schedule->shares_maps();
  if (shares && !value_mult_given) m.value_mult = 2;
  if (shares && m.value_mult != 2) {
    throw ConfigError(std::string(source) + ": reuse models use value_mult = 2");
  }
  if (!shares && m.value_mult != 1) {
    throw ConfigError(std::string(source) + ": value_mult = 2 requires a reuse schedule");
  }
  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return run;
}

std::string json_scalar(const nlohmann::json& v, const std::string& where) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  throw ConfigError(where + ": expected a string or integer");
}

RunConfig parse_json(std::string_view text, std::string_view source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(std::string(source) + ": top level must be an object");
  std::map<std::string, Entry> entries;
  for (const auto& [key, value] : doc.items()) {
    const std::string where = std::string(source) + ": key '" + key + "'";
    if (key == "reuse_groups" && value.is_array()) {
      std::ostringstream os;
      bool first = true;
      for (const auto& group : value) {
        if (!group.is_array() || group.empty()) throw ConfigError(where + ": groups must be non-empty arrays");
        if (!first) os << ",";
        first = false;
        os << group.front().get<int>();
        for (std::size_t i = 1; i < group.size(); ++i) {
          if (group[i].get<int>() != group.front().get<int>() + static_cast<int>(i)) {
            throw ConfigError(where + ": group members must be consecutive");
          }
        }
        if (group.size() > 1) os << "-" << group.back().get<int>();
      }
      entries[key] = {os.str(), where};
      continue;
    }
    entries[key] = {json_scalar(value, where), where};
  }
  return build(entries, source);
}

}  // namespace

RunConfig parse_config(std::string_view text, std::string_view source) {
  if (const auto body = trim(text); !body.empty() && body.front() == '{') return parse_json(text, source);
  std::map<std::string, Entry> entries;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view view = line;
    if (const auto hash = view.find('#'); hash != std::string_view::npos) view = view.substr(0, hash);
    view = trim(view);
    if (view.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(number);
    const auto eq = view.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(view.substr(0, eq)));
    const std::string value(trim(view.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (entries.contains(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    entries[key] = {value, where};
  }
  return build(entries, source);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return parse_config(os.str(), path.string());
}

std::string dump_config(const RunConfig& config) {
  const ModelConfig& m = config.model;
  std::ostringstream os;
  os << "layer_kind = " << to_string(m.layer_kind) << "\n"
     << "num_layers = " << m.num_layers << "\n"
     << "dim = " << m.dim << "\n"
     << "heads = " << m.heads << "\n"
     << "ff_mult = " << m.ff_mult << "\n"
     << "conv_kernel = " << m.conv_kernel << "\n"
     << "persistent_slots = " << m.persistent_slots << "\n"
     << "activation = " << to_string(m.activation) << "\n"
     << "value_mult = " << m.value_mult << "\n"
     << "seed = " << m.seed << "\n";
  if (config.schedule) {
    if (config.schedule->group_size() > 0) {
      os << "reuse = " << config.schedule->to_string() << "\n";
    } else {
      os << "reuse_groups = " << config.schedule->to_string() << "\n";
    }
  }
  if (config.gate_seed) os << "gate_seed = " << *config.gate_seed << "\n";
  return os.str();
}

std::vector<std::string> preset_names() { return {"conformer-m", "allattention-lm"}; }

RunConfig preset_config(std::string_view name) {
  RunConfig run;
  ModelConfig& m = run.model;
  if (name == "conformer-m") {
    m.layer_kind = LayerKind::conformer;
    m.num_layers = 16;
    m.dim = 256;
    m.heads = 4;
    m.ff_mult = 4;
    m.conv_kernel = 31;
    m.activation = Activation::swish;
  } else if (name == "allattention-lm") {
    m.layer_kind = LayerKind::all_attention;
    m.num_layers = 16;
    m.dim = 512;
    m.heads = 8;
    m.persistent_slots = 64;
    m.activation = Activation::relu;
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected conformer-m or allattention-lm)");
  }
  return run;
}

std::vector<int> parse_lengths(std::string_view text) {
  text = trim(text);
  const std::string whole(text);
  std::vector<int> out;
  if (const auto dots = text.find(".."); dots != std::string_view::npos) {
    std::string_view rest = text.substr(dots + 2);
    bool doubling = false;
    if (const auto colon = rest.find(':'); colon != std::string_view::npos) {
      if (trim(rest.substr(colon + 1)) != "x2") {
        throw ConfigError("lengths '" + whole + "': only ':x2' is supported after a range");
      }
      doubling = true;
      rest = rest.substr(0, colon);
    }
    const int first = parse_number<int>(trim(text.substr(0, dots)), "lengths '" + whole + "'");
    const int last = parse_number<int>(trim(rest), "lengths '" + whole + "'");
    if (first <= 0 || last < first) throw ConfigError("lengths '" + whole + "': need 0 < a <= b");
    for (int t = first; t <= last; t = doubling ? t * 2 : t + first) out.push_back(t);
    return out;
  }
  while (!text.empty()) {
    const auto comma = text.find(',');
    const int t = parse_number<int>(trim(text.substr(0, comma)), "lengths '" + whole + "'");
    if (t <= 0) throw ConfigError("lengths '" + whole + "': lengths must be positive");
    out.push_back(t);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
  }
  if (out.empty()) throw ConfigError("no lengths given");
  return out;
}

}  // namespace atnb
