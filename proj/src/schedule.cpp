#include "atnb/schedule.hpp"

#include <charconv>
#include <sstream>

#include "atnb/error.hpp"

namespace atnb {

namespace {

int parse_positive(std::string_view text, std::string_view what, std::string_view whole) {
  int value = 0;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("reuse config '" + std::string(whole) + "': bad " + std::string(what));
  }
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace

ReuseSchedule ReuseSchedule::from_groups(std::vector<ReuseGroup> groups, int num_layers) {
  if (num_layers <= 0) throw ConfigError("reuse schedule needs a positive layer count");
  ReuseSchedule s;
  s.num_layers_ = num_layers;
  s.leader_of_.assign(static_cast<std::size_t>(num_layers), -1);
  int expected = 0;
  for (const auto& g : groups) {
    if (g.leader != expected) {
      throw ConfigError("reuse group led by layer " + std::to_string(g.leader) +
                        " does not start at layer " + std::to_string(expected));
    }
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      if (g.members[i] != g.leader + 1 + static_cast<int>(i)) {
        throw ConfigError("reuse group led by layer " + std::to_string(g.leader) +
                          " has non-consecutive members");
      }
    }
    if (g.leader + g.size() > num_layers) {
      throw ConfigError("reuse group led by layer " + std::to_string(g.leader) +
                        " runs past layer count " + std::to_string(num_layers));
    }
    for (int l = g.leader; l < g.leader + g.size(); ++l) {
      s.leader_of_[static_cast<std::size_t>(l)] = g.leader;
    }
    expected = g.leader + g.size();
  }
  if (expected != num_layers) {
    throw ConfigError("reuse groups cover " + std::to_string(expected) + " of " +
                      std::to_string(num_layers) + " layers");
  }
  s.groups_ = std::move(groups);
  return s;
}

ReuseSchedule ReuseSchedule::baseline(int num_layers) {
  std::vector<ReuseGroup> groups;
  for (int l = 0; l < num_layers; ++l) groups.push_back({l, {}});
  return from_groups(std::move(groups), num_layers);
}

int ReuseSchedule::group_size() const {
  if (groups_.empty()) return 0;
  const int first = groups_.front().size();
  for (const auto& g : groups_) {
    if (g.size() != first) return 0;
  }
  return first;
}

int ReuseSchedule::leader_of(int layer) const {
  if (layer < 0 || layer >= num_layers_) {
    throw InvariantError("layer " + std::to_string(layer) + " outside reuse schedule");
  }
  return leader_of_[static_cast<std::size_t>(layer)];
}

int ReuseSchedule::group_end(int layer) const {
  const int leader = leader_of(layer);
  for (const auto& g : groups_) {
    if (g.leader == leader) return g.leader + g.size() - 1;
  }
  return leader;
}

std::string ReuseSchedule::to_string() const {
  std::ostringstream os;
  if (const int m = group_size(); m > 0) {
    os << m << "x" << group_count();
    return os.str();
  }
  bool first = true;
  for (const auto& g : groups_) {
    if (!first) os << ",";
    first = false;
    os << g.leader;
    if (!g.members.empty()) os << "-" << g.members.back();
  }
  return os.str();
}

ReuseSchedule parse_reuse_config(std::string_view text, int num_layers) {
  const std::string_view whole = text;
  text = trim(text);
  const auto sep = text.find_first_of("xX");
  if (sep == std::string_view::npos) {
    throw ConfigError("reuse config '" + std::string(whole) + "' is not of the form AxB");
  }
  const int size = parse_positive(text.substr(0, sep), "group size", whole);
  const int count = parse_positive(text.substr(sep + 1), "group count", whole);
  if (size <= 0 || count <= 0) {
    throw ConfigError("reuse config '" + std::string(whole) + "' needs positive A and B");
  }
  if (size * count != num_layers) {
    throw ConfigError("reuse config " + std::to_string(size) + "x" + std::to_string(count) +
                      ": A*B = " + std::to_string(size * count) + " but L = " +
                      std::to_string(num_layers));
  }
  std::vector<ReuseGroup> groups;
  for (int b = 0; b < count; ++b) {
    ReuseGroup g{b * size, {}};
    for (int m = 1; m < size; ++m) g.members.push_back(b * size + m);
    groups.push_back(std::move(g));
  }
  return ReuseSchedule::from_groups(std::move(groups), num_layers);
}

ReuseSchedule parse_reuse_groups(std::string_view text, int num_layers) {
  const std::string_view whole = text;
  std::vector<ReuseGroup> groups;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = trim(text.substr(0, comma));
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    const auto dash = item.find('-');
    const int first = parse_positive(item.substr(0, dash), "group start", whole);
    const int last = dash == std::string_view::npos
                         ? first
                         : parse_positive(item.substr(dash + 1), "group end", whole);
    if (last < first) {
      throw ConfigError("reuse groups '" + std::string(whole) + "': descending range");
    }
    ReuseGroup g{first, {}};
    for (int l = first + 1; l <= last; ++l) g.members.push_back(l);
    groups.push_back(std::move(g));
  }
  return ReuseSchedule::from_groups(std::move(groups), num_layers);
}

}  // namespace atnb
