#pragma once

#include <string>
#include <vector>

namespace ews {

enum class LayerKind { kConv3x3, kConv1x1, kFullyConnected };

std::string layer_kind_name(LayerKind k);

// One parameterized layer on a path. channels is the output channel count
// (the c_j owned by the layer); stride applies to the spatial dims.
struct LayerTopology {
  LayerKind kind = LayerKind::kConv3x3;
  int channels = 0;
  int stride = 1;
};

// A path is an ordered list of layers. An identity (skip) path has none.
struct PathTopology {
  std::vector<LayerTopology> layers;
  bool identity() const { return layers.empty(); }
  int out_channels(int in_channels) const {
    return identity() ? in_channels : layers.back().channels;
  }
};

struct BlockTopology {
  std::vector<PathTopology> paths;
  bool downsamples = false;
  int n_paths() const { return static_cast<int>(paths.size()); }
};

// Static description of the maskable classifier: a stem layer, a stack of
// multi-path blocks summed per block, global average pooling and a linear
// head. Everything downstream (parameter shapes, mask shapes, controller
// decision schedule) is derived from this.
struct ModelTopology {
  int input_h = 32;
  int input_w = 32;
  int input_c = 3;
  int num_classes = 10;
  int stem_channels = 16;
  std::vector<BlockTopology> blocks;

  int n_blocks() const { return static_cast<int>(blocks.size()); }
  // Channel count entering block b.
  int block_in_channels(int b) const;
  int final_channels() const;
};

// Returns an empty string when valid, otherwise a description of the first
// violation. `groups` is the channel-group count G; every layer's channel
// count must be divisible by it.
std::string validate_topology(const ModelTopology& topo, int groups);

// The reference desk model: `blocks_per_stage` two-path residual blocks per
// stage, one stage per entry of `stage_channels`, stride-2 transitions with
// 1x1 projection shortcuts.
ModelTopology make_desk_resnet(std::vector<int> stage_channels = {16, 32, 64},
                               int blocks_per_stage = 2, int num_classes = 10,
                               int input_hw = 32, int input_c = 3);

// Structured-text round trip (used inside checkpoints).
std::string topology_to_text(const ModelTopology& topo);
ModelTopology topology_from_text(const std::string& text);

}  // namespace ews
