#pragma once

#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "ews/rng.hpp"
#include "ews/topology.hpp"

namespace ews {

class MaskableModel;

// Addresses one parameterized layer inside a topology.
struct LayerKey {
  int block = 0;
  int path = 0;
  int layer = 0;
  auto operator<=>(const LayerKey&) const = default;
};

// A concrete subnet: per block the selected path indices, and for every
// layer on a selected path the selected channel-group indices (each layer's
// channels are split into `groups` contiguous groups). Index lists are kept
// sorted ascending.
struct SubnetSpec {
  double rho = 1.0;
  int groups = 4;
  std::vector<std::vector<int>> path_choices;
  std::map<LayerKey, std::vector<int>> channel_choices;

  bool path_selected(int block, int path) const;
  // Selected output channels of a layer, expanded from groups.
  std::vector<int> selected_channels(const LayerKey& key,
                                     int channel_count) const;
};

// max(1, round-half-even(rho * n)), clamped to n.
int selection_count(int n, double rho);

// The full subnet (every path, every group) for rho = 1.
SubnetSpec full_subnet(const ModelTopology& topo, int groups);

// Uniform draw over Omega: every admissible path subset and group subset of
// the mandated cardinality is equiprobable.
SubnetSpec sample_uniform_subnet(const ModelTopology& topo, double rho,
                                 int groups, Rng& rng);

// The L1-norm heuristic: per block keep the paths with lowest total L1
// weight norm (identity paths have norm 0), per layer keep the groups with
// lowest summed absolute filter weight. Ties break toward lower index.
SubnetSpec subnet_from_l1(const MaskableModel& model, double rho, int groups);

// Every invariant violation, empty when the spec is valid.
std::vector<std::string> validate_subnet(const SubnetSpec& spec,
                                         const ModelTopology& topo);

// Structured-text record for logging and replay.
std::string subnet_to_text(const SubnetSpec& spec);
SubnetSpec subnet_from_text(const std::string& text);

}  // namespace ews
