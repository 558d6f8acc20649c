#include "ews/topology.hpp"

#include <sstream>
#include <stdexcept>

namespace ews {

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::kConv3x3: return "conv3x3";
    case LayerKind::kConv1x1: return "conv1x1";
    case LayerKind::kFullyConnected: return "fc";
  }
  return "?";
}

static LayerKind layer_kind_from_name(const std::string& s) {
  if (s == "conv3x3") return LayerKind::kConv3x3;
  if (s == "conv1x1") return LayerKind::kConv1x1;
  if (s == "fc") return LayerKind::kFullyConnected;
  throw std::runtime_error("unknown layer kind: " + s);
}

int ModelTopology::block_in_channels(int b) const {
  int c = stem_channels;
  for (int i = 0; i < b; ++i) {
    const BlockTopology& blk = blocks[static_cast<std::size_t>(i)];
    c = blk.paths.front().out_channels(c);
  }
  return c;
}

int ModelTopology::final_channels() const {
  return block_in_channels(n_blocks());
}

std::string validate_topology(const ModelTopology& topo, int groups) {
  std::ostringstream err;
  if (topo.input_h <= 0 || topo.input_w <= 0 || topo.input_c <= 0)
    return "non-positive input shape";
  if (topo.num_classes < 1) return "num_classes must be >= 1";
  if (topo.stem_channels < 1) return "stem_channels must be >= 1";
  if (topo.stem_channels % groups != 0)
    return "stem channel count not divisible by group count";
  int in_c = topo.stem_channels;
  for (int b = 0; b < topo.n_blocks(); ++b) {
    const BlockTopology& blk = topo.blocks[static_cast<std::size_t>(b)];
    if (blk.n_paths() < 1) {
      err << "block " << b << " has no paths";
      return err.str();
    }
    int out_c = -1;
    for (int p = 0; p < blk.n_paths(); ++p) {
      const PathTopology& path = blk.paths[static_cast<std::size_t>(p)];
      if (path.identity() && blk.downsamples) {
        err << "block " << b << " path " << p
            << ": identity path in a downsampling block";
        return err.str();
      }
      int stride_prod = 1;
      for (const LayerTopology& l : path.layers) {
        if (l.channels < 1) {
          err << "block " << b << " path " << p << ": layer channel_count < 1";
          return err.str();
        }
        if (l.channels % groups != 0) {
          err << "block " << b << " path " << p
              << ": channel count not divisible by group count " << groups;
          return err.str();
        }
        stride_prod *= l.stride;
      }
      if (blk.downsamples != (stride_prod == 2)) {
        err << "block " << b << " path " << p
            << ": path stride inconsistent with downsamples flag";
        return err.str();
      }
      int pc = path.out_channels(in_c);
      if (out_c == -1) out_c = pc;
      if (pc != out_c) {
        err << "block " << b << ": paths disagree on output channels ("
            << pc << " vs " << out_c << ")";
        return err.str();
      }
    }
    in_c = out_c;
  }
  return "";
}

ModelTopology make_desk_resnet(std::vector<int> stage_channels,
                               int blocks_per_stage, int num_classes,
                               int input_hw, int input_c) {
  ModelTopology topo;
  topo.input_h = input_hw;
  topo.input_w = input_hw;
  topo.input_c = input_c;
  topo.num_classes = num_classes;
  topo.stem_channels = stage_channels.front();
  int in_c = topo.stem_channels;
  for (std::size_t s = 0; s < stage_channels.size(); ++s) {
    int c = stage_channels[s];
    for (int b = 0; b < blocks_per_stage; ++b) {
      bool down = (s > 0 && b == 0);
      BlockTopology blk;
      blk.downsamples = down;
      PathTopology conv_path;
      conv_path.layers.push_back({LayerKind::kConv3x3, c, down ? 2 : 1});
      conv_path.layers.push_back({LayerKind::kConv3x3, c, 1});
      blk.paths.push_back(conv_path);
      if (down || in_c != c) {
        PathTopology proj;
        proj.layers.push_back({LayerKind::kConv1x1, c, down ? 2 : 1});
        blk.paths.push_back(proj);
      } else {
        blk.paths.push_back(PathTopology{});  // skip connection
      }
      topo.blocks.push_back(blk);
      in_c = c;
    }
  }
  return topo;
}

std::string topology_to_text(const ModelTopology& topo) {
  std::ostringstream os;
  os << "topology v1\n";
  os << "input " << topo.input_h << " " << topo.input_w << " " << topo.input_c
     << "\n";
  os << "classes " << topo.num_classes << "\n";
  os << "stem " << topo.stem_channels << "\n";
  for (const BlockTopology& blk : topo.blocks) {
    os << "block downsamples=" << (blk.downsamples ? 1 : 0) << "\n";
    for (const PathTopology& path : blk.paths) {
      os << "path";
      if (path.identity()) {
        os << " identity";
      } else {
        for (const LayerTopology& l : path.layers)
          os << " " << layer_kind_name(l.kind) << ":" << l.channels << ":"
             << l.stride;
      }
      os << "\n";
    }
  }
  return os.str();
}

ModelTopology topology_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "topology v1")
    throw std::runtime_error("bad topology header");
  ModelTopology topo;
  topo.blocks.clear();
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "input") {
      ls >> topo.input_h >> topo.input_w >> topo.input_c;
    } else if (tag == "classes") {
      ls >> topo.num_classes;
    } else if (tag == "stem") {
      ls >> topo.stem_channels;
    } else if (tag == "block") {
      std::string attr;
      ls >> attr;
      BlockTopology blk;
      blk.downsamples = (attr == "downsamples=1");
      topo.blocks.push_back(blk);
    } else if (tag == "path") {
      if (topo.blocks.empty()) throw std::runtime_error("path before block");
      PathTopology path;
      std::string item;
      while (ls >> item) {
        if (item == "identity") break;
        auto c1 = item.find(':');
        auto c2 = item.find(':', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
          throw std::runtime_error("bad layer spec: " + item);
        LayerTopology l;
        l.kind = layer_kind_from_name(item.substr(0, c1));
        l.channels = std::stoi(item.substr(c1 + 1, c2 - c1 - 1));
        l.stride = std::stoi(item.substr(c2 + 1));
        path.layers.push_back(l);
      }
      topo.blocks.back().paths.push_back(path);
    } else {
      throw std::runtime_error("unknown topology line: " + line);
    }
  }
  return topo;
}

}  // namespace ews
