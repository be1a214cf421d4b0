#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace atnb {

// Partition of the layer stack into reuse groups. The leader (lowest index)
// computes the attention maps; members consume them with their own values.
struct ReuseGroup {
  int leader = 0;
  std::vector<int> members;

  int size() const { return 1 + static_cast<int>(members.size()); }
  friend bool operator==(const ReuseGroup&, const ReuseGroup&) = default;
};

class ReuseSchedule {
 public:
  ReuseSchedule() = default;

  // Validates that the groups partition [0, num_layers) into runs of
  // consecutive indices, each led by its lowest index.
  static ReuseSchedule from_groups(std::vector<ReuseGroup> groups, int num_layers);
  // Every layer is its own leader.
  static ReuseSchedule baseline(int num_layers);

  const std::vector<ReuseGroup>& groups() const { return groups_; }
  int num_layers() const { return num_layers_; }
  int group_count() const { return static_cast<int>(groups_.size()); }
  // True when some group has followers, i.e. maps are actually shared.
  bool shares_maps() const { return group_count() < num_layers_; }
  // Common group size, or 0 when groups are heterogeneous.
  int group_size() const;

  bool is_leader(int layer) const { return leader_of(layer) == layer; }
  int leader_of(int layer) const;
  // Last layer of the group that `layer` belongs to.
  int group_end(int layer) const;

  // "AxB" when uniform, otherwise an explicit list like "0-3,4-5,6-15".
  std::string to_string() const;

  friend bool operator==(const ReuseSchedule&, const ReuseSchedule&) = default;

 private:
  std::vector<ReuseGroup> groups_;
  std::vector<int> leader_of_;
  int num_layers_ = 0;
};

// Parses "<A>x<B>": B groups of A consecutive layers. A·B must equal L.
ReuseSchedule parse_reuse_config(std::string_view text, int num_layers);

// Parses an explicit group list "0-3,4-7,8,9-15" (ranges inclusive).
ReuseSchedule parse_reuse_groups(std::string_view text, int num_layers);

}  // namespace atnb
