#include <gtest/gtest.h>

#include "bnnv/bnnv.hpp"
#include "support/oracles.hpp"
#include "support/tiny.hpp"

using namespace bnnv;

namespace {

// Y_0 = sum(x), Y_1 = sum(x) - 2 * x_3: label 1 wins once x_3 <= 0.
Network flip_toy() {
  auto net = NetworkBuilder({2, 2, 1}, 2).flatten().dense(2).build();
  std::get<QDense>(net.layers[1]).weights = {1, 1, 1, 1, 1, 1, 1, -1};
  return net;
}

}  // namespace

TEST(RandomAttack, PointBallAroundCorrectLabel) {
  Rng rng(1);
  int tried = 0;
  for (int k = 0; k < 100; ++k) {
    auto net = tiny::random_network(rng);
    auto img = tiny::random_image(rng, net.input_shape);
    auto y = network_forward(net, img).values();
    const Label l = predict(y);
    if (violates(y, l)) continue;
    ++tried;
    auto prop = make_property(img, 0, l, false, net.num_classes);
    EXPECT_FALSE(random_attack(net, prop, {200, std::uint64_t(k)}));
    EXPECT_FALSE(greedy_attack(net, prop));
  }
  EXPECT_GT(tried, 50);
}

TEST(RandomAttack, FindsOnePixelFlip) {
  auto net = flip_toy();
  Tensor img({2, 2, 1}, {2, 5, 3, 1});
  ASSERT_EQ(predict(net, img), 0u);
  auto prop = make_property(img, 1, 0, false, 2);
  ASSERT_TRUE(oracle::grid_has_counterexample(net, prop));
  auto w = random_attack(net, prop, {1000, 7});
  ASSERT_TRUE(w);
  EXPECT_TRUE(check_witness(net, prop, *w));
  EXPECT_EQ(w->input_values[3], 0);
  ASSERT_TRUE(w->output_values);
  EXPECT_EQ(*w->output_values, network_forward(net, Tensor({2, 2, 1}, w->input_values)).values());
}

TEST(RandomAttack, SameSeedSameWitness) {
  Rng rng(2);
  int found = 0;
  for (int k = 0; k < 60; ++k) {
    auto in = tiny::random_instance(rng);
    for (bool grid : {true, false}) {
      AttackConfig cfg{500, 99, 5, grid};
      auto a = random_attack(in.net, in.prop, cfg), b = random_attack(in.net, in.prop, cfg);
      EXPECT_EQ(a, b);
      if (a) {
        ++found;
        EXPECT_TRUE(check_witness(in.net, in.prop, *a));
      }
    }
  }
  EXPECT_GT(found, 0);
}

TEST(RandomAttack, RejectsBadConfigAndShapes) {
  auto net = flip_toy();
  auto prop = make_property(Tensor({2, 2, 1}, 1.0), 1, 0, false, 2);
  EXPECT_THROW(random_attack(net, prop, {0}), Error);
  auto wrong = make_property(Tensor({3}, 1.0), 1, 0, false, 2);
  EXPECT_THROW(random_attack(net, wrong), ShapeError);
  EXPECT_THROW(greedy_attack(net, wrong), ShapeError);
}

// Linear toys over P <= 12 pixels whose best perturbation sits on a vertex of
// the box. A vertex witness is confirmed by enumerating all 2^P vertices.
TEST(GreedyAttack, VertexToyWithinPMoves) {
  Rng rng(3);
  int cases = 0;
  for (int k = 0; k < 200 && cases < 60; ++k) {
    const std::size_t p = 2 + uniform_below(rng, 11);
    auto net = NetworkBuilder({p}, 2).dense(2).build();
    auto& d = std::get<QDense>(net.layers[0]);
    for (std::size_t i = 0; i < p; ++i) {
      d.weights[i] = 1;
      d.weights[p + i] = (rng() & 1) ? 1 : -1;
    }
    auto img = tiny::random_image(rng, net.input_shape, 20);
    auto y = network_forward(net, img).values();
    if (violates(y, 0)) continue;
    const double eps = double(uniform_int(rng, 1, 8));
    auto prop = make_property(img, eps, 0, false, 2);
    bool vertex_witness = false;
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << p) && !vertex_witness; ++m) {
      Tensor x(net.input_shape);
      for (std::size_t i = 0; i < p; ++i) x[i] = (m >> i & 1) ? prop.input_bounds[i].hi : prop.input_bounds[i].lo;
      vertex_witness = violates(network_forward(net, x).values(), 0);
    }
    if (!vertex_witness) continue;
    ++cases;
    std::vector<double> trace;
    auto w = greedy_attack(net, prop, {}, &trace);
    ASSERT_TRUE(w) << "case " << k;
    EXPECT_TRUE(check_witness(net, prop, *w));
    EXPECT_LE(trace.size() - 1, p);
  }
  EXPECT_GE(cases, 20);
}

TEST(GreedyAttack, ObjectiveNeverDecreases) {
  Rng rng(4);
  for (int k = 0; k < 200; ++k) {
    auto in = tiny::random_instance(rng);
    std::vector<double> trace;
    greedy_attack(in.net, in.prop, {10, 0, 5, k % 2 == 0}, &trace);
    ASSERT_FALSE(trace.empty());
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GT(trace[i], trace[i - 1]);
  }
}

TEST(Falsify, NoWitnessOnVerifiedInstances) {
  Rng rng(5);
  int robust = 0;
  for (int k = 0; k < 200; ++k) {
    auto in = tiny::random_instance(rng);
    if (in.epsilon == 0) continue;
    if (bab_verify(in.net, in.prop, {30, 1'000'000, true}).kind != VerdictKind::Verified) continue;
    ++robust;
    auto v = falsify(in.net, in.prop, {2000, std::uint64_t(k)});
    EXPECT_EQ(v.kind, VerdictKind::Unknown);
    EXPECT_FALSE(v.witness);
  }
  EXPECT_GT(robust, 10);
}

TEST(Falsify, EveryWitnessChecksOut) {
  Rng rng(6);
  int found = 0;
  for (int k = 0; k < 200; ++k) {
    auto in = tiny::random_instance(rng);
    auto v = falsify(in.net, in.prop, {2000, std::uint64_t(k)});
    if (v.kind == VerdictKind::Falsified) {
      ++found;
      ASSERT_TRUE(v.witness);
      EXPECT_TRUE(check_witness(in.net, in.prop, *v.witness));
      EXPECT_TRUE(oracle::grid_has_counterexample(in.net, in.prop));
    } else {
      EXPECT_EQ(v.kind, VerdictKind::Unknown);
    }
  }
  EXPECT_GT(found, 20);
}

TEST(Falsify, TimeLimitOnLargeModel) {
  auto net = build_arch_a(64, 64);
  randomize_network(net, 1);
  Rng rng(7);
  auto img = tiny::random_image(rng, net.input_shape, 255);
  auto prop = make_property(img, 1, predict(net, img), false, 43);
  AttackConfig cfg;
  cfg.time_limit_seconds = 0.5;
  auto v = falsify(net, prop, cfg);
  EXPECT_LT(v.stats.seconds, 5.0);
  EXPECT_TRUE(v.kind == VerdictKind::Falsified || v.kind == VerdictKind::Timeout || v.kind == VerdictKind::Unknown);
  if (v.witness) EXPECT_TRUE(check_witness(net, prop, *v.witness));
}
