#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ews/tensor.hpp"

namespace ews {

// Versioned training-state container: topology descriptor, named parameter
// tensors (including normalization running statistics), optimizer buffers,
// the policy state, a config echo, and the global step. Tensor payloads are
// written as hex floats, so save -> load round trips are bit-exact.
struct Checkpoint {
  std::string topology_text;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> norm_state;
  std::vector<std::pair<std::string, Tensor>> optimizer;
  std::string controller_text;  // empty when the run has no policy
  std::string config_text;
  long long step = 0;

  const Tensor* find(const std::vector<std::pair<std::string, Tensor>>& list,
                     const std::string& name) const;
};

std::string checkpoint_to_text(const Checkpoint& cp);
Checkpoint checkpoint_from_text(const std::string& text);

void save_checkpoint(const Checkpoint& cp, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ews
