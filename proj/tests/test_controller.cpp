#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "ews/controller.hpp"
#include "ews/rng.hpp"
#include "ews/subnet.hpp"
#include "ews/topology.hpp"

using namespace ews;

namespace {

ModelTopology two_block_topology() {
  ModelTopology topo;
  topo.input_h = 8;
  topo.input_w = 8;
  topo.input_c = 3;
  topo.num_classes = 4;
  topo.stem_channels = 4;
  BlockTopology b0;
  b0.paths.push_back(PathTopology{{{LayerKind::kConv3x3, 4, 1},
                                   {LayerKind::kConv3x3, 4, 1}}});
  b0.paths.push_back(PathTopology{});
  topo.blocks.push_back(b0);
  BlockTopology b1;
  b1.downsamples = true;
  b1.paths.push_back(PathTopology{{{LayerKind::kConv3x3, 8, 2},
                                   {LayerKind::kConv3x3, 8, 1}}});
  b1.paths.push_back(PathTopology{{{LayerKind::kConv1x1, 8, 2}}});
  topo.blocks.push_back(b1);
  return topo;
}

ModelTopology one_block_topology() {
  ModelTopology topo;
  topo.input_h = 6;
  topo.input_w = 6;
  topo.input_c = 3;
  topo.num_classes = 3;
  topo.stem_channels = 4;
  BlockTopology b0;
  b0.paths.push_back(PathTopology{{{LayerKind::kConv3x3, 4, 1}}});
  b0.paths.push_back(PathTopology{});
  topo.blocks.push_back(b0);
  return topo;
}

void k_subsets(int n, int k, std::vector<std::vector<int>>& out) {
  out.clear();
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int start) {
    if (static_cast<int>(cur.size()) == k) {
      out.push_back(cur);
      return;
    }
    const int need = k - static_cast<int>(cur.size());
    for (int i = start; i <= n - need; ++i) {
      cur.push_back(i);
      rec(i + 1);
      cur.pop_back();
    }
  };
  rec(0);
}

// Every admissible subnet for (topo, rho, groups).
std::vector<SubnetSpec> enumerate_subnets(const ModelTopology& topo,
                                          double rho, int groups) {
  std::vector<SubnetSpec> result;
  // all combinations of per-block path subsets
  std::vector<std::vector<std::vector<int>>> per_block;
  for (const auto& b : topo.blocks) {
    std::vector<std::vector<int>> subs;
    k_subsets(b.n_paths(), selection_count(b.n_paths(), rho), subs);
    per_block.push_back(std::move(subs));
  }
  std::vector<std::size_t> idx(per_block.size(), 0);
  const int kg = selection_count(groups, rho);
  std::vector<std::vector<int>> gsubs;
  k_subsets(groups, kg, gsubs);
  for (;;) {
    SubnetSpec base;
    base.rho = rho;
    base.groups = groups;
    for (std::size_t b = 0; b < per_block.size(); ++b)
      base.path_choices.push_back(per_block[b][idx[b]]);
    // layers that need channel choices, in canonical order
    std::vector<LayerKey> keys;
    for (int b = 0; b < topo.n_blocks(); ++b)
      for (int p : base.path_choices[static_cast<std::size_t>(b)]) {
        const auto& path = topo.blocks[static_cast<std::size_t>(b)]
                               .paths[static_cast<std::size_t>(p)];
        for (int l = 0; l < static_cast<int>(path.layers.size()); ++l)
          keys.push_back({b, p, l});
      }
    std::function<void(std::size_t)> rec = [&](std::size_t ki) {
      if (ki == keys.size()) {
        result.push_back(base);
        return;
      }
      for (const auto& sub : gsubs) {
        base.channel_choices[keys[ki]] = sub;
        rec(ki + 1);
      }
      base.channel_choices.erase(keys[ki]);
    };
    rec(0);
    // advance the mixed-radix counter over path subsets
    std::size_t b = 0;
    for (; b < per_block.size(); ++b) {
      if (++idx[b] < per_block[b].size()) break;
      idx[b] = 0;
    }
    if (b == per_block.size()) break;
  }
  return result;
}

}  // namespace

TEST_CASE("subnet probabilities are exactly normalized") {
  ModelTopology topo = two_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 8;
  cfg.rho = 0.5;
  cfg.groups = 4;
  Controller ctl(topo, cfg);
  Rng init(41);
  ctl.init_params(init);
  // sharpen the policy so the sum is not trivially uniform
  for (double& v : ctl.params()) v *= 6.0;

  std::vector<SubnetSpec> all = enumerate_subnets(topo, 0.5, 4);
  CHECK(all.size() == 1554);  // (36+1) path-0/identity x (36+6)
  double total = 0.0;
  for (const auto& s : all) {
    REQUIRE(validate_subnet(s, topo).empty());
    total += std::exp(ctl.log_prob(s));
  }
  CHECK(std::fabs(total - 1.0) <= 1e-9);
}

TEST_CASE("sampling agrees with log_prob") {
  ModelTopology topo = two_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 12;
  cfg.rho = 0.7;
  Controller ctl(topo, cfg);
  Rng init(43);
  ctl.init_params(init);
  Rng rng(99);
  for (int t = 0; t < 50; ++t) {
    double lp = 0.0;
    SubnetSpec s = ctl.sample(rng, &lp);
    REQUIRE(validate_subnet(s, topo).empty());
    CHECK(ctl.log_prob(s) == lp);  // same arithmetic, bit-identical
  }
}

TEST_CASE("sampling frequencies match the policy distribution") {
  ModelTopology topo = one_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 8;
  cfg.rho = 0.5;
  cfg.groups = 2;
  Controller ctl(topo, cfg);
  Rng init(47);
  ctl.init_params(init);
  for (double& v : ctl.params()) v *= 4.0;  // non-uniform target

  std::vector<SubnetSpec> all = enumerate_subnets(topo, 0.5, 2);
  CHECK(all.size() == 3);  // conv path with group 0 or 1, or the identity
  std::map<std::string, double> want;
  for (const auto& s : all) want[subnet_to_text(s)] = std::exp(ctl.log_prob(s));

  Rng rng(1234);
  std::map<std::string, int> counts;
  const int trials = 40000;
  for (int t = 0; t < trials; ++t)
    counts[subnet_to_text(ctl.sample(rng))]++;
  for (const auto& [text, prob] : want) {
    const double f = counts[text] / static_cast<double>(trials);
    CHECK(std::fabs(f - prob) < 0.01);
  }
}

TEST_CASE("log_prob rejects malformed subnets") {
  ModelTopology topo = two_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 8;
  cfg.rho = 0.5;
  Controller ctl(topo, cfg);
  Rng init(3);
  ctl.init_params(init);
  Rng rng(4);
  SubnetSpec good = ctl.sample(rng);

  SubnetSpec bad = good;
  bad.path_choices[0] = {0, 1};  // wrong cardinality for rho=0.5
  CHECK_THROWS(ctl.log_prob(bad));

  // force the conv path so channel choices are required, then corrupt them
  SubnetSpec forced = good;
  forced.path_choices[1] = {0};
  forced.channel_choices[{1, 0, 0}] = {1, 0};  // not ascending
  forced.channel_choices[{1, 0, 1}] = {0, 1};
  forced.channel_choices.erase({1, 1, 0});
  if (forced.path_choices[0] == std::vector<int>{0}) {
    forced.channel_choices[{0, 0, 0}] = {0, 1};
    forced.channel_choices[{0, 0, 1}] = {0, 1};
  }
  CHECK_THROWS(ctl.log_prob(forced));
}

TEST_CASE("exact policy gradient matches enumerated finite differences") {
  ModelTopology topo = two_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 6;
  cfg.rho = 0.5;
  cfg.groups = 4;
  Controller ctl(topo, cfg);
  Rng init(53);
  ctl.init_params(init);

  std::vector<SubnetSpec> all = enumerate_subnets(topo, 0.5, 4);
  // a fixed, spread-out reward per subnet
  std::vector<double> reward(all.size());
  {
    Rng r(777);
    for (double& v : reward) v = r.uniform(-1.0, 1.0);
  }

  // expected REINFORCE gradient with a baseline; the baseline term sums to
  // zero over the full distribution, so any constant works
  const double baseline = 0.37;
  std::vector<double> exact(ctl.params().size(), 0.0);
  std::vector<double> g;
  for (std::size_t a = 0; a < all.size(); ++a) {
    const double lp = ctl.grad_log_prob(all[a], g);
    const double w = std::exp(lp) * (reward[a] - baseline);
    for (std::size_t j = 0; j < exact.size(); ++j) exact[j] += w * g[j];
  }

  auto expected_reward = [&]() {
    double e = 0.0;
    for (std::size_t a = 0; a < all.size(); ++a)
      e += std::exp(ctl.log_prob(all[a])) * reward[a];
    return e;
  };

  Rng pick(31);
  int checked = 0;
  for (int rep = 0; rep < 48; ++rep) {
    const std::size_t j = static_cast<std::size_t>(
        pick.uniform_int(static_cast<int>(ctl.params().size())));
    const double h = 1e-5;
    const double orig = ctl.params()[j];
    ctl.params()[j] = orig + h;
    const double ep = expected_reward();
    ctl.params()[j] = orig - h;
    const double em = expected_reward();
    ctl.params()[j] = orig;
    const double fd = (ep - em) / (2 * h);
    const double scale = std::max({1e-6, std::fabs(fd), std::fabs(exact[j])});
    CHECK(std::fabs(fd - exact[j]) / scale <= 1e-5);
    ++checked;
  }
  CHECK(checked == 48);
}

TEST_CASE("reinforce baseline is an exponential moving average") {
  ModelTopology topo = one_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 8;
  cfg.rho = 0.5;
  cfg.groups = 2;
  cfg.baseline_decay = 0.9;
  Controller ctl(topo, cfg);
  Rng init(61);
  ctl.init_params(init);
  CHECK(!ctl.baseline_initialized());

  Rng rng(62);
  std::vector<SubnetSpec> batch1 = {ctl.sample(rng), ctl.sample(rng)};
  const double used1 = ctl.reinforce_update(batch1, {0.2, 0.6});
  CHECK(used1 == doctest::Approx(0.4).epsilon(1e-12));  // first-batch mean
  CHECK(ctl.baseline() == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(ctl.update_count() == 1);

  std::vector<SubnetSpec> batch2 = {ctl.sample(rng), ctl.sample(rng)};
  const double used2 = ctl.reinforce_update(batch2, {1.0, 1.0});
  CHECK(used2 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(ctl.baseline() == doctest::Approx(0.9 * 0.4 + 0.1 * 1.0).epsilon(1e-12));
  CHECK(ctl.update_count() == 2);
}

TEST_CASE("reinforce shifts probability toward high-reward subnets") {
  ModelTopology topo = one_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 8;
  cfg.rho = 0.5;
  cfg.groups = 2;
  cfg.lr = 0.02;
  Controller ctl(topo, cfg);
  Rng init(71);
  ctl.init_params(init);

  // reward the identity path, penalize the conv path
  auto reward_of = [](const SubnetSpec& s) {
    return s.path_selected(0, 1) ? 1.0 : -1.0;
  };
  SubnetSpec identity_only;
  identity_only.rho = 0.5;
  identity_only.groups = 2;
  identity_only.path_choices = {{1}};
  const double before = std::exp(ctl.log_prob(identity_only));

  Rng rng(72);
  for (int step = 0; step < 120; ++step) {
    std::vector<SubnetSpec> batch;
    std::vector<double> rewards;
    for (int i = 0; i < 8; ++i) {
      batch.push_back(ctl.sample(rng));
      rewards.push_back(reward_of(batch.back()));
    }
    ctl.reinforce_update(batch, rewards);
  }
  const double after = std::exp(ctl.log_prob(identity_only));
  CHECK(after > before);
  CHECK(after > 0.9);
}

TEST_CASE("controller state text round trip") {
  ModelTopology topo = two_block_topology();
  ControllerConfig cfg;
  cfg.hidden = 10;
  cfg.rho = 0.7;
  Controller a(topo, cfg);
  Rng init(81);
  a.init_params(init);
  Rng rng(82);
  for (int step = 0; step < 3; ++step) {
    std::vector<SubnetSpec> batch = {a.sample(rng), a.sample(rng)};
    a.reinforce_update(batch, {0.1 * step, -0.2});
  }
  const std::string text = a.state_to_text();

  Controller b(topo, cfg);
  b.state_from_text(text);
  CHECK(b.state_to_text() == text);
  CHECK(b.baseline() == a.baseline());
  CHECK(b.update_count() == a.update_count());
  Rng ra(5), rb(5);
  for (int t = 0; t < 10; ++t) {
    double la = 0.0, lb = 0.0;
    SubnetSpec sa = a.sample(ra, &la);
    SubnetSpec sb = b.sample(rb, &lb);
    CHECK(subnet_to_text(sa) == subnet_to_text(sb));
    CHECK(la == lb);
  }

  Controller c(topo, ControllerConfig{.hidden = 9, .rho = 0.7});
  CHECK_THROWS(c.state_from_text(text));
}
