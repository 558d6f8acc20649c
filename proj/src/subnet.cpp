#include "ews/subnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ews/model.hpp"

namespace ews {

int selection_count(int n, double rho) {
  // round half to even, then clamp to [1, n]
  const double v = rho * n;
  double r = std::nearbyint(v);  // default FE_TONEAREST rounds half-even
  int k = static_cast<int>(r);
  if (k < 1) k = 1;
  if (k > n) k = n;
  return k;
}

bool SubnetSpec::path_selected(int block, int path) const {
  const auto& sel = path_choices[static_cast<std::size_t>(block)];
  return std::binary_search(sel.begin(), sel.end(), path);
}

std::vector<int> SubnetSpec::selected_channels(const LayerKey& key,
                                               int channel_count) const {
  auto it = channel_choices.find(key);
  if (it == channel_choices.end()) return all_channels(channel_count);
  const int per_group = channel_count / groups;
  std::vector<int> out;
  out.reserve(it->second.size() * static_cast<std::size_t>(per_group));
  for (int g : it->second)
    for (int c = g * per_group; c < (g + 1) * per_group; ++c)
      out.push_back(c);
  return out;
}

SubnetSpec full_subnet(const ModelTopology& topo, int groups) {
  SubnetSpec spec;
  spec.rho = 1.0;
  spec.groups = groups;
  for (int b = 0; b < topo.n_blocks(); ++b) {
    const BlockTopology& blk = topo.blocks[static_cast<std::size_t>(b)];
    spec.path_choices.push_back(all_channels(blk.n_paths()));
    for (int p = 0; p < blk.n_paths(); ++p) {
      const PathTopology& path = blk.paths[static_cast<std::size_t>(p)];
      for (int l = 0; l < static_cast<int>(path.layers.size()); ++l)
        spec.channel_choices[{b, p, l}] = all_channels(groups);
    }
  }
  return spec;
}

SubnetSpec sample_uniform_subnet(const ModelTopology& topo, double rho,
                                 int groups, Rng& rng) {
  SubnetSpec spec;
  spec.rho = rho;
  spec.groups = groups;
  for (int b = 0; b < topo.n_blocks(); ++b) {
    const BlockTopology& blk = topo.blocks[static_cast<std::size_t>(b)];
    const int k = selection_count(blk.n_paths(), rho);
    spec.path_choices.push_back(rng.sample_k_of_n(k, blk.n_paths()));
    for (int p : spec.path_choices.back()) {
      const PathTopology& path = blk.paths[static_cast<std::size_t>(p)];
      const int kg = selection_count(groups, rho);
      for (int l = 0; l < static_cast<int>(path.layers.size()); ++l)
        spec.channel_choices[{b, p, l}] = rng.sample_k_of_n(kg, groups);
    }
  }
  return spec;
}

SubnetSpec subnet_from_l1(const MaskableModel& model, double rho, int groups) {
  const ModelTopology& topo = model.topology();
  const ParamSet& params = model.params();
  SubnetSpec spec;
  spec.rho = rho;
  spec.groups = groups;

  auto weight_of = [&](int b, int p, int l) -> const Tensor& {
    std::string name = "b" + std::to_string(b) + ".p" + std::to_string(p) +
                       ".u" + std::to_string(l) + ".w";
    const int id = params.find(name);
    if (id < 0) throw std::logic_error("missing weight " + name);
    return params.values[static_cast<std::size_t>(id)];
  };
  // keep the k lowest values; ties toward the lower index
  auto lowest_k = [](const std::vector<double>& norms, int k) {
    std::vector<int> order(norms.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
      return norms[static_cast<std::size_t>(a)] <
             norms[static_cast<std::size_t>(c)];
    });
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());
    return order;
  };

  for (int b = 0; b < topo.n_blocks(); ++b) {
    const BlockTopology& blk = topo.blocks[static_cast<std::size_t>(b)];
    std::vector<double> path_norms;
    for (int p = 0; p < blk.n_paths(); ++p) {
      const PathTopology& path = blk.paths[static_cast<std::size_t>(p)];
      double norm = 0.0;  // identity paths stay at zero and sort first
      for (int l = 0; l < static_cast<int>(path.layers.size()); ++l) {
        const Tensor& w = weight_of(b, p, l);
        for (std::size_t i = 0; i < w.size(); ++i) norm += std::fabs(w[i]);
      }
      path_norms.push_back(norm);
    }
    const int k = selection_count(blk.n_paths(), rho);
    spec.path_choices.push_back(lowest_k(path_norms, k));
    for (int p : spec.path_choices.back()) {
      const PathTopology& path = blk.paths[static_cast<std::size_t>(p)];
      const int kg = selection_count(groups, rho);
      for (int l = 0; l < static_cast<int>(path.layers.size()); ++l) {
        const Tensor& w = weight_of(b, p, l);
        const int per_group = w.dim(0) / groups;
        const std::size_t filter =
            static_cast<std::size_t>(w.dim(1)) * w.dim(2) * w.dim(3);
        std::vector<double> gnorms(static_cast<std::size_t>(groups), 0.0);
        for (int g = 0; g < groups; ++g)
          for (int c = g * per_group; c < (g + 1) * per_group; ++c) {
            const float* f = w.data() + static_cast<std::size_t>(c) * filter;
            for (std::size_t i = 0; i < filter; ++i)
              gnorms[static_cast<std::size_t>(g)] += std::fabs(f[i]);
          }
        spec.channel_choices[{b, p, l}] = lowest_k(gnorms, kg);
      }
    }
  }
  return spec;
}

std::vector<std::string> validate_subnet(const SubnetSpec& spec,
                                         const ModelTopology& topo) {
  std::vector<std::string> out;
  auto err = [&out](const std::string& s) { out.push_back(s); };
  if (!(spec.rho > 0.0 && spec.rho <= 1.0))
    err("rho must be in (0, 1], got " + std::to_string(spec.rho));
  if (spec.groups < 1) err("group count must be >= 1");
  if (static_cast<int>(spec.path_choices.size()) != topo.n_blocks()) {
    err("path_choices covers " + std::to_string(spec.path_choices.size()) +
        " blocks, topology has " + std::to_string(topo.n_blocks()));
    return out;
  }
  for (int b = 0; b < topo.n_blocks(); ++b) {
    const BlockTopology& blk = topo.blocks[static_cast<std::size_t>(b)];
    const auto& sel = spec.path_choices[static_cast<std::size_t>(b)];
    const int expect = selection_count(blk.n_paths(), spec.rho);
    if (static_cast<int>(sel.size()) != expect)
      err("block " + std::to_string(b) + ": keeps " +
          std::to_string(sel.size()) + " paths, rule mandates " +
          std::to_string(expect));
    for (std::size_t i = 0; i < sel.size(); ++i) {
      if (sel[i] < 0 || sel[i] >= blk.n_paths())
        err("block " + std::to_string(b) + ": path index " +
            std::to_string(sel[i]) + " out of range");
      if (i > 0 && sel[i] <= sel[i - 1])
        err("block " + std::to_string(b) +
            ": path indices not strictly ascending");
    }
  }
  for (const auto& [key, groups_sel] : spec.channel_choices) {
    const std::string where = "block " + std::to_string(key.block) + " path " +
                              std::to_string(key.path) + " layer " +
                              std::to_string(key.layer);
    if (key.block < 0 || key.block >= topo.n_blocks()) {
      err(where + ": block out of range");
      continue;
    }
    const BlockTopology& blk =
        topo.blocks[static_cast<std::size_t>(key.block)];
    if (key.path < 0 || key.path >= blk.n_paths()) {
      err(where + ": path out of range");
      continue;
    }
    const PathTopology& path = blk.paths[static_cast<std::size_t>(key.path)];
    if (key.layer < 0 ||
        key.layer >= static_cast<int>(path.layers.size())) {
      err(where + ": layer out of range");
      continue;
    }
    if (spec.path_choices.size() ==
        static_cast<std::size_t>(topo.n_blocks())) {
      const auto& psel = spec.path_choices[static_cast<std::size_t>(key.block)];
      if (!std::binary_search(psel.begin(), psel.end(), key.path))
        err(where + ": channel choices on a deselected path");
    }
    const int expect = selection_count(spec.groups, spec.rho);
    if (static_cast<int>(groups_sel.size()) != expect)
      err(where + ": keeps " + std::to_string(groups_sel.size()) +
          " groups, rule mandates " + std::to_string(expect));
    for (std::size_t i = 0; i < groups_sel.size(); ++i) {
      if (groups_sel[i] < 0 || groups_sel[i] >= spec.groups)
        err(where + ": group index out of range");
      if (i > 0 && groups_sel[i] <= groups_sel[i - 1])
        err(where + ": group indices not strictly ascending");
    }
  }
  // every layer on a selected path needs a channel choice
  for (int b = 0; b < topo.n_blocks() &&
                  spec.path_choices.size() ==
                      static_cast<std::size_t>(topo.n_blocks());
       ++b) {
    for (int p : spec.path_choices[static_cast<std::size_t>(b)]) {
      if (p < 0 || p >= topo.blocks[static_cast<std::size_t>(b)].n_paths())
        continue;
      const PathTopology& path =
          topo.blocks[static_cast<std::size_t>(b)].paths[
              static_cast<std::size_t>(p)];
      for (int l = 0; l < static_cast<int>(path.layers.size()); ++l)
        if (!spec.channel_choices.count({b, p, l}))
          err("block " + std::to_string(b) + " path " + std::to_string(p) +
              " layer " + std::to_string(l) + ": missing channel choice");
    }
  }
  return out;
}

std::string subnet_to_text(const SubnetSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  os << "subnet rho=" << spec.rho << " groups=" << spec.groups << ";";
  for (std::size_t b = 0; b < spec.path_choices.size(); ++b) {
    os << " b" << b << "=";
    for (std::size_t i = 0; i < spec.path_choices[b].size(); ++i)
      os << (i ? "," : "") << spec.path_choices[b][i];
  }
  for (const auto& [key, sel] : spec.channel_choices) {
    os << " c" << key.block << "." << key.path << "." << key.layer << "=";
    for (std::size_t i = 0; i < sel.size(); ++i)
      os << (i ? "," : "") << sel[i];
  }
  return os.str();
}

static std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(std::stoi(item));
  return out;
}

SubnetSpec subnet_from_text(const std::string& text) {
  SubnetSpec spec;
  std::istringstream is(text);
  std::string tok;
  is >> tok;
  if (tok != "subnet") throw std::runtime_error("bad subnet record");
  while (is >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    std::string key = tok.substr(0, tok.back() == ';' ? eq : eq);
    std::string val = tok.substr(eq + 1);
    if (!val.empty() && val.back() == ';') val.pop_back();
    if (key == "rho") {
      spec.rho = std::stod(val);
    } else if (key == "groups") {
      spec.groups = std::stoi(val);
    } else if (key[0] == 'b') {
      const std::size_t b = static_cast<std::size_t>(std::stoi(key.substr(1)));
      if (spec.path_choices.size() <= b) spec.path_choices.resize(b + 1);
      spec.path_choices[b] = parse_int_list(val);
    } else if (key[0] == 'c') {
      std::istringstream ks(key.substr(1));
      std::string part;
      int idx[3] = {0, 0, 0};
      for (int& v : idx) {
        std::getline(ks, part, '.');
        v = std::stoi(part);
      }
      spec.channel_choices[{idx[0], idx[1], idx[2]}] = parse_int_list(val);
    }
  }
  return spec;
}

}  // namespace ews
