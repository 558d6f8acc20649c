#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "ews/model.hpp"
#include "ews/rng.hpp"
#include "ews/subnet.hpp"
#include "ews/topology.hpp"

using namespace ews;

namespace {

ModelTopology tiny_topology() {
  ModelTopology topo;
  topo.input_h = 8;
  topo.input_w = 8;
  topo.input_c = 3;
  topo.num_classes = 4;
  topo.stem_channels = 4;

  BlockTopology b0;
  b0.downsamples = false;
  b0.paths.push_back(PathTopology{{{LayerKind::kConv3x3, 4, 1},
                                   {LayerKind::kConv3x3, 4, 1}}});
  b0.paths.push_back(PathTopology{});  // identity
  topo.blocks.push_back(b0);

  BlockTopology b1;
  b1.downsamples = true;
  b1.paths.push_back(PathTopology{{{LayerKind::kConv3x3, 8, 2},
                                   {LayerKind::kConv3x3, 8, 1}}});
  b1.paths.push_back(PathTopology{{{LayerKind::kConv1x1, 8, 2}}});
  topo.blocks.push_back(b1);
  return topo;
}

}  // namespace

TEST_CASE("selection_count rounding and clamping") {
  // round-half-even with a floor of one selection
  CHECK(selection_count(2, 0.7) == 1);   // 1.4 -> 1
  CHECK(selection_count(2, 0.75) == 2);  // 1.5 -> 2 (even)
  CHECK(selection_count(2, 0.25) == 1);  // 0.5 -> 0 -> floor 1
  CHECK(selection_count(4, 0.7) == 3);   // 2.8 -> 3
  CHECK(selection_count(4, 0.5) == 2);
  CHECK(selection_count(4, 0.625) == 2);  // 2.5 -> 2 (even)
  CHECK(selection_count(4, 0.875) == 4);  // 3.5 -> 4 (even)
  CHECK(selection_count(6, 0.0) == 1);
  CHECK(selection_count(6, 1.0) == 6);
  CHECK(selection_count(1, 0.1) == 1);
  // monotone in rho for fixed n
  for (int n : {1, 2, 3, 4, 6, 8}) {
    int prev = 0;
    for (int i = 0; i <= 100; ++i) {
      int k = selection_count(n, i / 100.0);
      CHECK(k >= prev);
      CHECK(k >= 1);
      CHECK(k <= n);
      prev = k;
    }
  }
}

TEST_CASE("full subnet covers everything and validates") {
  ModelTopology topo = tiny_topology();
  SubnetSpec full = full_subnet(topo, 4);
  CHECK(full.rho == 1.0);
  REQUIRE(full.path_choices.size() == 2);
  CHECK(full.path_choices[0] == std::vector<int>{0, 1});
  CHECK(full.path_choices[1] == std::vector<int>{0, 1});
  // identity path contributes no layer entries
  CHECK(full.channel_choices.count({0, 1, 0}) == 0);
  CHECK(full.channel_choices.at({0, 0, 0}) == std::vector<int>({0, 1, 2, 3}));
  CHECK(full.channel_choices.at({1, 1, 0}) == std::vector<int>({0, 1, 2, 3}));
  CHECK(validate_subnet(full, topo).empty());
  // group expansion: 8 channels over 4 groups, groups {1,3} -> {2,3,6,7}
  SubnetSpec s = full;
  s.channel_choices[{1, 0, 0}] = {1, 3};
  CHECK(s.selected_channels({1, 0, 0}, 8) == std::vector<int>({2, 3, 6, 7}));
}

TEST_CASE("uniform sampling hits every admissible choice equally") {
  ModelTopology topo = tiny_topology();
  Rng rng(2024);
  const int trials = 20000;
  // rho = 0.5: one path of two per block, two groups of four per layer
  std::map<int, int> path_counts[2];
  std::map<std::vector<int>, int> group_counts;
  int spot_group_hits[4] = {0, 0, 0, 0};
  for (int t = 0; t < trials; ++t) {
    SubnetSpec s = sample_uniform_subnet(topo, 0.5, 4, rng);
    REQUIRE(validate_subnet(s, topo).empty());
    for (int b = 0; b < 2; ++b) {
      REQUIRE(s.path_choices[b].size() == 1);
      path_counts[b][s.path_choices[b][0]]++;
    }
    // channel choices exist exactly for layers on selected paths
    for (const auto& [key, sel] : s.channel_choices) {
      CHECK(s.path_selected(key.block, key.path));
      CHECK(sel.size() == 2);
      CHECK(std::is_sorted(sel.begin(), sel.end()));
    }
    if (s.path_selected(1, 0)) {
      const auto& sel = s.channel_choices.at({1, 0, 0});
      group_counts[sel]++;
      for (int g : sel) spot_group_hits[g]++;
    }
  }
  // each path should be picked about half the time
  for (int b = 0; b < 2; ++b)
    for (int p = 0; p < 2; ++p) {
      double f = path_counts[b][p] / static_cast<double>(trials);
      CHECK(f == doctest::Approx(0.5).epsilon(0.04));
    }
  // each of the C(4,2)=6 group subsets about 1/6 of the conditional draws
  int conditional = 0;
  for (const auto& [sel, n] : group_counts) conditional += n;
  CHECK(group_counts.size() == 6);
  for (const auto& [sel, n] : group_counts) {
    double f = n / static_cast<double>(conditional);
    CHECK(f == doctest::Approx(1.0 / 6.0).epsilon(0.06));
  }
  // marginally every group index is kept half the time
  for (int g = 0; g < 4; ++g) {
    double f = spot_group_hits[g] / static_cast<double>(conditional);
    CHECK(f == doctest::Approx(0.5).epsilon(0.04));
  }
}

TEST_CASE("uniform sampling with rho=1 reproduces the full subnet") {
  ModelTopology topo = tiny_topology();
  Rng rng(7);
  SubnetSpec s = sample_uniform_subnet(topo, 1.0, 4, rng);
  SubnetSpec full = full_subnet(topo, 4);
  CHECK(s.path_choices == full.path_choices);
  CHECK(s.channel_choices == full.channel_choices);
}

TEST_CASE("l1 heuristic keeps the lowest-norm paths and groups") {
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(11);
  model.init_params(init);

  // force a known ordering: block 1 path 0 heavy, path 1 light; in block 1
  // path 1 layer 0 make groups 2 and 0 the lightest
  ParamSet& params = model.params();
  auto fill = [&](const std::string& name, float v) {
    int i = params.find(name);
    REQUIRE(i >= 0);
    Tensor& t = params.values[static_cast<std::size_t>(i)];
    std::fill(t.data(), t.data() + t.size(), v);
  };
  fill("b1.p0.u0.w", 1.0f);
  fill("b1.p0.u1.w", 1.0f);
  fill("b1.p1.u0.w", 0.01f);
  {
    // shape (8, 4, 1, 1)
    Tensor& w = params.values[static_cast<std::size_t>(
        params.find("b1.p1.u0.w"))];
    for (int oc = 0; oc < 8; ++oc) {
      float v = 0.05f;                 // groups 1 and 3 heavier
      if (oc < 2) v = 0.02f;           // group 0 second-lightest
      if (oc >= 4 && oc < 6) v = 0.01f;  // group 2 lightest
      for (int ic = 0; ic < 4; ++ic) w.at(oc, ic, 0, 0) = v;
    }
  }

  SubnetSpec s = subnet_from_l1(model, 0.5, 4);
  REQUIRE(validate_subnet(s, topo).empty());
  // block 0: identity path (norm 0) beats the conv path
  CHECK(s.path_choices[0] == std::vector<int>{1});
  // block 1: the light projection path wins
  CHECK(s.path_choices[1] == std::vector<int>{1});
  CHECK(s.channel_choices.count({1, 0, 0}) == 0);
  CHECK(s.channel_choices.at({1, 1, 0}) == std::vector<int>({0, 2}));

  // scaling all weights by a positive constant leaves the choice unchanged
  for (auto& t : params.values)
    for (std::size_t i = 0; i < t.size(); ++i) t[i] *= 3.25f;
  SubnetSpec s2 = subnet_from_l1(model, 0.5, 4);
  CHECK(s2.path_choices == s.path_choices);
  CHECK(s2.channel_choices == s.channel_choices);
}

TEST_CASE("l1 heuristic breaks exact ties toward the lower index") {
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(12);
  model.init_params(init);
  ParamSet& params = model.params();
  for (auto& t : params.values)
    std::fill(t.data(), t.data() + t.size(), 0.5f);
  SubnetSpec s = subnet_from_l1(model, 0.5, 4);
  // identity in block 0 still wins (norm 0 < any conv norm)
  CHECK(s.path_choices[0] == std::vector<int>{1});
  // block 1 path norms: p0 has two 3x3 convs, p1 one 1x1 conv -> p1 lighter
  CHECK(s.path_choices[1] == std::vector<int>{1});
  // all groups tie exactly -> lowest indices
  CHECK(s.channel_choices.at({1, 1, 0}) == std::vector<int>({0, 1}));
}

TEST_CASE("validate_subnet reports each violation kind") {
  ModelTopology topo = tiny_topology();
  SubnetSpec good = full_subnet(topo, 4);
  CHECK(validate_subnet(good, topo).empty());

  SUBCASE("wrong path cardinality") {
    SubnetSpec s = good;
    s.rho = 0.5;  // expects 1 path per block but 2 are listed
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("path index out of range") {
    SubnetSpec s = good;
    s.path_choices[0] = {0, 2};
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("unsorted selection") {
    SubnetSpec s = good;
    s.path_choices[0] = {1, 0};
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("duplicate group") {
    SubnetSpec s = good;
    s.channel_choices[{0, 0, 0}] = {1, 1, 2, 3};
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("group index out of range") {
    SubnetSpec s = good;
    s.channel_choices[{0, 0, 0}] = {0, 1, 2, 4};
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("channel choices on a deselected path") {
    SubnetSpec s = good;
    s.rho = 0.5;
    s.path_choices = {{1}, {1}};
    for (auto it = s.channel_choices.begin(); it != s.channel_choices.end();)
      if (it->first.path == 1 && it->first.block == 1) {
        it->second = {0, 1};
        ++it;
      } else {
        it = s.channel_choices.erase(it);
      }
    REQUIRE(validate_subnet(s, topo).empty());
    s.channel_choices[{0, 0, 0}] = {0, 1};  // path 0 of block 0 not selected
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("missing channel choices for a selected layer") {
    SubnetSpec s = good;
    s.channel_choices.erase({1, 0, 1});
    CHECK(!validate_subnet(s, topo).empty());
  }
  SUBCASE("wrong number of blocks") {
    SubnetSpec s = good;
    s.path_choices.pop_back();
    CHECK(!validate_subnet(s, topo).empty());
  }
}

TEST_CASE("subnet text round trip is exact") {
  ModelTopology topo = tiny_topology();
  Rng rng(99);
  for (int t = 0; t < 25; ++t) {
    SubnetSpec s = sample_uniform_subnet(topo, 0.7, 4, rng);
    std::string text = subnet_to_text(s);
    SubnetSpec back = subnet_from_text(text);
    CHECK(back.rho == s.rho);
    CHECK(back.groups == s.groups);
    CHECK(back.path_choices == s.path_choices);
    CHECK(back.channel_choices == s.channel_choices);
    CHECK(subnet_to_text(back) == text);
  }
}

TEST_CASE("desk topology subnet space matches the advertised shape") {
  ModelTopology topo = make_desk_resnet();
  CHECK(validate_topology(topo, 4).empty());
  Rng rng(5);
  SubnetSpec s = sample_uniform_subnet(topo, 0.7, 4, rng);
  REQUIRE(validate_subnet(s, topo).empty());
  // rho=0.7 keeps 1 of 2 paths per block
  for (const auto& pc : s.path_choices) CHECK(pc.size() == 1);
  // and 3 of 4 channel groups per selected layer
  for (const auto& [key, sel] : s.channel_choices) CHECK(sel.size() == 3);
}
