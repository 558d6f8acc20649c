#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ews/losses.hpp"
#include "ews/model.hpp"
#include "ews/rng.hpp"
#include "ews/subnet.hpp"
#include "ews/topology.hpp"

using namespace ews;

namespace {

Tensor random_batch(int n, const ModelTopology& topo, Rng& rng,
                    double lo = 0.0, double hi = 1.0) {
  Tensor x({n, topo.input_c, topo.input_h, topo.input_w});
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(rng.uniform(lo, hi));
  return x;
}

// Tiny two-block topology used for gradient checks.
ModelTopology tiny_topology(int classes = 3) {
  ModelTopology topo = make_desk_resnet({4, 8}, 1, classes, 8, 3);
  return topo;
}

float loss_of(MaskableModel& model, const Tensor& x,
              const std::vector<int>& labels, const SubnetSpec* subnet,
              Mode mode) {
  ForwardTrace trace;
  model.forward(x, subnet, mode, trace);
  return cross_entropy(trace.logits, labels);
}

}  // namespace

TEST_CASE("forward_full shape and determinism contracts") {
  Rng rng(7);
  ModelTopology topo = make_desk_resnet({8, 16}, 1, 10, 16, 3);
  MaskableModel model(topo, 4);
  Rng init(1);
  model.init_params(init);
  Tensor x = random_batch(4, topo, rng);
  Tensor logits = model.forward_full(x, Mode::kEval);
  CHECK(logits.dim(0) == 4);
  CHECK(logits.dim(1) == 10);
  for (std::size_t i = 0; i < logits.size(); ++i)
    CHECK(std::isfinite(logits[i]));
  // bitwise identical on repeat in eval mode
  Tensor again = model.forward_full(x, Mode::kEval);
  CHECK(max_abs_diff(logits, again) == 0.0f);
}

TEST_CASE("zero-weight linear head gives all-zero logits") {
  Rng rng(3);
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(2);
  model.init_params(init);
  model.params().values[static_cast<std::size_t>(model.params().find("head.w"))]
      .zero();
  model.params().values[static_cast<std::size_t>(model.params().find("head.b"))]
      .zero();
  Tensor x = random_batch(2, topo, rng);
  Tensor logits = model.forward_full(x, Mode::kEval);
  for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == 0.0f);
}

TEST_CASE("rejects mismatched batch shape") {
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(2);
  model.init_params(init);
  Tensor bad({2, 3, 7, 8});
  CHECK_THROWS(model.forward_full(bad, Mode::kEval));
}

TEST_CASE("mask identity: all-ones subnet matches full forward") {
  Rng rng(11);
  ModelTopology topo = make_desk_resnet({8, 16, 16}, 1, 10, 16, 3);
  MaskableModel model(topo, 4);
  Rng init(5);
  model.init_params(init);
  SubnetSpec full = full_subnet(topo, 4);
  for (int rep = 0; rep < 20; ++rep) {
    Tensor x = random_batch(5, topo, rng);
    Tensor a = model.forward_full(x, Mode::kEval);
    Tensor b = model.forward_masked(x, full, Mode::kEval);
    CHECK(max_abs_diff(a, b) <= 1e-6f);
  }
}

TEST_CASE("deselected path parameters cannot influence the output") {
  Rng rng(13);
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(4);
  model.init_params(init);
  // keep only path 1 in block 0
  SubnetSpec spec = full_subnet(topo, 4);
  spec.rho = 0.5;
  spec.path_choices[0] = {1};
  for (auto it = spec.channel_choices.begin();
       it != spec.channel_choices.end();) {
    if (it->first.block == 0 && it->first.path == 0)
      it = spec.channel_choices.erase(it);
    else {
      it->second = {0, 1};  // rho=0.5 keeps 2 of 4 groups
      ++it;
    }
  }
  spec.path_choices[1] = {0};
  for (auto it = spec.channel_choices.begin();
       it != spec.channel_choices.end();) {
    if (it->first.block == 1 && it->first.path == 1)
      it = spec.channel_choices.erase(it);
    else
      ++it;
  }
  REQUIRE(validate_subnet(spec, topo).empty());

  Tensor x = random_batch(3, topo, rng);
  Tensor before = model.forward_masked(x, spec, Mode::kEval);
  // scramble every parameter of the deselected path
  ParamSet& params = model.params();
  for (std::size_t i = 0; i < params.names.size(); ++i)
    if (params.names[i].rfind("b0.p0.", 0) == 0)
      for (std::size_t j = 0; j < params.values[i].size(); ++j)
        params.values[i][j] = static_cast<float>(rng.normal()) * 100.0f;
  Tensor after = model.forward_masked(x, spec, Mode::kEval);
  CHECK(max_abs_diff(before, after) == 0.0f);
}

TEST_CASE("masked channels are exactly zero after their producing layer") {
  Rng rng(17);
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(6);
  model.init_params(init);
  SubnetSpec spec = full_subnet(topo, 4);
  // drop group 0 everywhere (channel 0 of 4 in the first block)
  spec.rho = 0.75;
  for (auto& [key, sel] : spec.channel_choices) sel = {1, 2, 3};
  REQUIRE(validate_subnet(spec, topo).empty());
  Tensor x = random_batch(2, topo, rng);
  ForwardTrace trace;
  model.forward(x, &spec, Mode::kEval, trace);
  const UnitTrace& u = trace.blocks[0].paths[0].units[0];
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < u.out.dim(2); ++h)
      for (int w = 0; w < u.out.dim(3); ++w) {
        CHECK(u.conv_out.at(n, 0, h, w) == 0.0f);
        CHECK(u.out.at(n, 0, h, w) == 0.0f);
      }
}

TEST_CASE("identity-only subnet block passes its input through") {
  Rng rng(19);
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(8);
  model.init_params(init);
  SubnetSpec spec;
  spec.rho = 0.5;
  spec.groups = 4;
  spec.path_choices = {{1}, {0}};  // block 0 keeps only the skip connection
  spec.channel_choices[{1, 0, 0}] = {0, 1};
  spec.channel_choices[{1, 0, 1}] = {1, 3};
  REQUIRE(validate_subnet(spec, topo).empty());
  Tensor x = random_batch(2, topo, rng);
  ForwardTrace trace;
  model.forward(x, &spec, Mode::kEval, trace);
  CHECK(max_abs_diff(trace.blocks[0].out, trace.stem.out) == 0.0f);
}

TEST_CASE("cross entropy examples") {
  SUBCASE("uniform logits over 10 classes") {
    Tensor logits({1, 10});
    std::vector<int> labels = {4};
    CHECK(cross_entropy(logits, labels) ==
          doctest::Approx(std::log(10.0)).epsilon(1e-6));
  }
  SUBCASE("closed-form two-class value") {
    Tensor logits({1, 2});
    logits[0] = 2.0f;
    logits[1] = 0.0f;
    std::vector<int> labels = {0};
    CHECK(cross_entropy(logits, labels) ==
          doctest::Approx(0.126928011).epsilon(1e-6));
  }
  SUBCASE("monotone in the margin") {
    float prev = 1e9f;
    for (float margin = 0.5f; margin < 8.0f; margin += 0.5f) {
      Tensor logits({1, 3});
      logits[0] = margin;
      std::vector<int> labels = {0};
      float ce = cross_entropy(logits, labels);
      CHECK(ce < prev);
      prev = ce;
    }
  }
  SUBCASE("out-of-range label rejected") {
    Tensor logits({1, 3});
    std::vector<int> labels = {3};
    CHECK_THROWS(cross_entropy(logits, labels));
  }
}

TEST_CASE("kl divergence examples") {
  SUBCASE("identical logits give zero") {
    Rng rng(23);
    Tensor t({2, 5});
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<float>(rng.normal());
    CHECK(kl_divergence(t, t) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("closed-form value") {
    // p = (0.5, 0.5), q = (0.75, 0.25)
    Tensor t({1, 2}), s({1, 2});
    s[0] = std::log(3.0f);
    CHECK(kl_divergence(t, s) == doctest::Approx(0.143841036).epsilon(1e-5));
  }
  SUBCASE("near-one-hot teacher vs uniform student approaches ln 2") {
    const double delta = 1e-6;
    double l0 = std::log((1.0 - delta) / delta);
    std::vector<double> teacher = {l0, 0.0}, student = {0.0, 0.0};
    double kl =
        detail::kl_divergence_rows<double>(teacher.data(), student.data(), 1, 2);
    CHECK(kl == doctest::Approx(std::log(2.0)).epsilon(1e-4));
  }
  SUBCASE("non-negative on random pairs, zero iff equal") {
    Rng rng(29);
    for (int rep = 0; rep < 200; ++rep) {
      std::vector<double> t(4), s(4);
      for (auto& v : t) v = rng.normal();
      for (auto& v : s) v = rng.normal();
      double kl = detail::kl_divergence_rows<double>(t.data(), s.data(), 1, 4);
      CHECK(kl >= 0.0);
      // shift-invariant equality: s = t + c gives zero
      std::vector<double> sc(4);
      for (int i = 0; i < 4; ++i) sc[i] = t[i] + 1.7;
      CHECK(detail::kl_divergence_rows<double>(t.data(), sc.data(), 1, 4) ==
            doctest::Approx(0.0).epsilon(1e-9));
      if (kl < 1e-9) {
        // distributions must actually match
        std::vector<double> pt(4), ps(4);
        detail::log_softmax(t.data(), 4, pt.data());
        detail::log_softmax(s.data(), 4, ps.data());
        for (int i = 0; i < 4; ++i)
          CHECK(std::fabs(std::exp(pt[i]) - std::exp(ps[i])) < 1e-4);
      }
    }
  }
}

TEST_CASE("accuracy counting and tie-breaking") {
  Tensor logits({4, 3});
  // rows: argmax 0, 2, 1, tie between 0 and 1 -> 0
  float vals[4][3] = {{3, 1, 0}, {0, 1, 2}, {0, 5, 1}, {2, 2, 0}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c)
      logits[static_cast<std::size_t>(r) * 3 + c] = vals[r][c];
  CHECK(accuracy(logits, {0, 2, 1, 0}) == doctest::Approx(1.0));
  CHECK(accuracy(logits, {1, 0, 2, 1}) == doctest::Approx(0.0));
  CHECK(accuracy(logits, {0, 2, 1, 1}) == doctest::Approx(0.75));
}

TEST_CASE("cross entropy gradient matches central differences (double)") {
  Rng rng(31);
  const int rows = 3, cols = 5;
  std::vector<double> logits(rows * cols);
  for (auto& v : logits) v = rng.normal();
  std::vector<int> labels = {1, 4, 0};
  std::vector<double> grad(rows * cols);
  detail::cross_entropy_rows(logits.data(), labels.data(), rows, cols,
                             grad.data());
  const double h = 1e-3;
  for (int i = 0; i < rows * cols; ++i) {
    std::vector<double> lp = logits, lm = logits;
    lp[static_cast<std::size_t>(i)] += h;
    lm[static_cast<std::size_t>(i)] -= h;
    double fd = (detail::cross_entropy_rows<double>(lp.data(), labels.data(),
                                                    rows, cols) -
                 detail::cross_entropy_rows<double>(lm.data(), labels.data(),
                                                    rows, cols)) /
                (2 * h);
    double denom = std::max(std::fabs(fd), 1e-8);
    CHECK(std::fabs(grad[static_cast<std::size_t>(i)] - fd) / denom <= 1e-4);
  }
}

TEST_CASE("model backward matches finite differences") {
  Rng rng(37);
  ModelTopology topo = tiny_topology();
  MaskableModel model(topo, 4);
  Rng init(9);
  model.init_params(init);
  Tensor x = random_batch(2, topo, rng);
  std::vector<int> labels = {0, 2};

  SubnetSpec spec = full_subnet(topo, 4);
  spec.rho = 0.5;
  spec.path_choices[0] = {0};
  spec.path_choices[1] = {0};
  for (auto& [key, sel] : spec.channel_choices) sel = {0, 2};
  for (auto it = spec.channel_choices.begin();
       it != spec.channel_choices.end();)
    if (it->first.path == 1)
      it = spec.channel_choices.erase(it);
    else
      ++it;
  REQUIRE(validate_subnet(spec, topo).empty());

  auto check_grads = [&](const SubnetSpec* subnet, Mode mode) {
    ForwardTrace trace;
    model.forward(x, subnet, mode, trace);
    Tensor dlogits;
    cross_entropy(trace.logits, labels, &dlogits);
    GradSet grads;
    grads.init_like(model.params());
    Tensor dx(x.shape());
    model.backward(trace, dlogits, grads, &dx);

    // spot-check a spread of weight coordinates per parameter tensor
    Rng pick(101);
    int checked = 0, ok = 0;
    for (std::size_t pi = 0; pi < model.params().values.size(); ++pi) {
      Tensor& t = model.params().values[pi];
      for (int rep = 0; rep < 3; ++rep) {
        std::size_t j = static_cast<std::size_t>(pick.uniform_int(
            static_cast<int>(t.size())));
        const float h = 5e-3f;
        const float orig = t[j];
        t[j] = orig + h;
        float lp = loss_of(model, x, labels, subnet, mode);
        t[j] = orig - h;
        float lm = loss_of(model, x, labels, subnet, mode);
        t[j] = orig;
        const float fd = (lp - lm) / (2 * h);
        const float an = grads.grads[pi][j];
        ++checked;
        if (std::fabs(fd - an) <= 2e-2f * std::max(1.0f, std::fabs(fd)))
          ++ok;
      }
    }
    // relu kinks make individual float finite differences noisy; require
    // the overwhelming majority to agree
    CHECK(ok >= checked - checked / 12 - 1);

    // input gradient
    Rng pick2(103);
    int xok = 0;
    for (int rep = 0; rep < 12; ++rep) {
      std::size_t j = static_cast<std::size_t>(
          pick2.uniform_int(static_cast<int>(x.size())));
      const float h = 5e-3f;
      const float orig = x[j];
      x[j] = orig + h;
      float lp = loss_of(model, x, labels, subnet, mode);
      x[j] = orig - h;
      float lm = loss_of(model, x, labels, subnet, mode);
      x[j] = orig;
      const float fd = (lp - lm) / (2 * h);
      if (std::fabs(fd - dx[j]) <= 2e-2f * std::max(1.0f, std::fabs(fd)))
        ++xok;
    }
    CHECK(xok >= 10);
  };

  SUBCASE("full network, train-mode normalization") {
    check_grads(nullptr, Mode::kTrain);
  }
  SUBCASE("full network, eval-mode normalization") {
    check_grads(nullptr, Mode::kEval);
  }
  SUBCASE("masked network, train-mode normalization") {
    check_grads(&spec, Mode::kTrain);
  }
}

TEST_CASE("topology text round trip") {
  ModelTopology topo = make_desk_resnet();
  std::string text = topology_to_text(topo);
  ModelTopology back = topology_from_text(text);
  CHECK(topology_to_text(back) == text);
  CHECK(validate_topology(back, 4).empty());
  CHECK(back.n_blocks() == 6);
  CHECK(back.final_channels() == 64);
}
