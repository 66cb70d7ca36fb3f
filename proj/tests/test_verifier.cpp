#include <gtest/gtest.h>

#include "bnnv/bnnv.hpp"
#include "support/oracles.hpp"
#include "support/tiny.hpp"

using namespace bnnv;

namespace {

IntervalTensor random_box(Rng& rng, const Tensor& center, double eps) {
  IntervalTensor b = IntervalTensor::point(center);
  for (std::size_t i = 0; i < b.size(); ++i) {
    b.lo[i] -= uniform_real(rng, 0, eps);
    b.hi[i] += uniform_real(rng, 0, eps);
  }
  return b;
}

}  // namespace

TEST(Ibp, PointBoxEqualsForward) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    auto net = tiny::random_network(rng);
    auto img = tiny::random_image(rng, net.input_shape);
    auto out = ibp_propagate(net, IntervalTensor::point(img));
    auto y = network_forward(net, img).values();
    EXPECT_EQ(out.lo, y);
    EXPECT_EQ(out.hi, y);
  }
}

TEST(Ibp, PassThroughBound) {
  auto net = NetworkBuilder({1}, 1).dense(1).build();
  auto out = ibp_propagate(net, IntervalTensor({1}, {14}, {34}));
  EXPECT_EQ(out.lo[0], 14);
  EXPECT_EQ(out.hi[0], 34);
}

TEST(Ibp, MonteCarloSoundness) {
  Rng rng(2);
  std::uint64_t violations = 0;
  for (int k = 0; k < 30; ++k) {
    auto net = tiny::random_network(rng);
    auto box = random_box(rng, tiny::random_image(rng, net.input_shape), 3);
    auto out = ibp_propagate(net, box);
    CompiledNetwork c(net);
    std::vector<double> x(box.size());
    for (int s = 0; s < 2000; ++s) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = uniform_real(rng, box.lo[i], box.hi[i]);
      auto y = c.logits(x);
      for (std::size_t j = 0; j < y.size(); ++j) violations += !(y[j] >= out.lo[j] && y[j] <= out.hi[j]);
    }
  }
  EXPECT_EQ(violations, 0u);
}

TEST(Ibp, ShrinkingBoxNeverWidensBounds) {
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    auto net = tiny::random_network(rng);
    auto outer = random_box(rng, tiny::random_image(rng, net.input_shape), 3);
    IntervalTensor inner = outer;
    for (std::size_t i = 0; i < inner.size(); ++i) {
      const double a = uniform_real(rng, outer.lo[i], outer.hi[i]), b = uniform_real(rng, outer.lo[i], outer.hi[i]);
      inner.lo[i] = std::min(a, b);
      inner.hi[i] = std::max(a, b);
    }
    auto o = ibp_propagate(net, outer), n = ibp_propagate(net, inner);
    for (std::size_t j = 0; j < o.size(); ++j) {
      EXPECT_GE(n.lo[j], o.lo[j]);
      EXPECT_LE(n.hi[j], o.hi[j]);
    }
  }
}

TEST(Ibp, FullScaleArchitecturesAreSound) {
  Rng rng(4);
  auto net = build_arch_b(48, 48);
  randomize_network(net, 5);
  auto img = tiny::random_image(rng, net.input_shape, 255);
  auto prop = make_property(img, 1, predict(net, img), false, 43);
  auto out = ibp_propagate(net, IntervalTensor::from_property(prop, net.input_shape));
  CompiledNetwork c(net);
  for (int s = 0; s < 20; ++s) {
    std::vector<double> x(prop.num_inputs);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = double(uniform_int(rng, std::int64_t(prop.input_bounds[i].lo), std::int64_t(prop.input_bounds[i].hi)));
    auto y = c.logits(x);
    for (std::size_t j = 0; j < y.size(); ++j) {
      EXPECT_GE(y[j], out.lo[j]);
      EXPECT_LE(y[j], out.hi[j]);
    }
  }
}

TEST(VerifyIbp, PointQueries) {
  Rng rng(6);
  int strict = 0, tied = 0;
  for (int k = 0; k < 300; ++k) {
    auto net = tiny::random_network(rng);
    auto img = tiny::random_image(rng, net.input_shape);
    auto y = network_forward(net, img).values();
    const Label l = predict(y);
    auto v = verify_ibp(net, make_property(img, 0, l, false, net.num_classes));
    if (violates(y, l)) {
      ++tied;
      EXPECT_EQ(v.kind, VerdictKind::Unknown);
    } else {
      ++strict;
      EXPECT_EQ(v.kind, VerdictKind::Verified);
    }
  }
  EXPECT_GT(strict, 0);
  EXPECT_GT(tied, 0);
}

TEST(FoldBnSign, Examples) {
  BatchNorm id{{1}, {0}, {0}, {1}, 0.0f};
  auto r = fold_bn_sign_channel(id, 0);
  EXPECT_EQ(r.kind, ThresholdRule::Kind::AtLeast);
  EXPECT_EQ(r.threshold, 0.0);
  BatchNorm neg{{-1}, {0}, {5}, {1}, 0.0f};
  r = fold_bn_sign_channel(neg, 0);
  EXPECT_EQ(r.kind, ThresholdRule::Kind::AtMost);
  EXPECT_EQ(r.threshold, 5.0);
  EXPECT_TRUE(r.fires(5.0));
  EXPECT_FALSE(r.fires(5.0000001));
  BatchNorm zero{{0}, {-0.5f}, {1}, {1}, 1e-3f};
  EXPECT_EQ(fold_bn_sign_channel(zero, 0).kind, ThresholdRule::Kind::AlwaysNegative);
  zero.beta[0] = 0.0f;
  EXPECT_EQ(fold_bn_sign_channel(zero, 0).kind, ThresholdRule::Kind::AlwaysPositive);
}

TEST(FoldBnSign, MatchesCompositionOnRandomScalars) {
  Rng rng(7);
  std::uint64_t mismatches = 0;
  for (int k = 0; k < 200; ++k) {
    BatchNorm b = tiny::random_bn(rng, 1, 50);
    if (k % 4 == 0) b.eps_bn = 0.0f;
    const auto rule = fold_bn_sign_channel(b, 0);
    if (b.gamma[0] != 0.0f) EXPECT_NEAR(rule.threshold, closed_form_threshold(b, 0), 1e-9 * (1 + std::abs(rule.threshold)));
    std::vector<double> xs{rule.threshold, std::nextafter(rule.threshold, -1e300), std::nextafter(rule.threshold, 1e300),
                           std::round(rule.threshold), 0.0};
    for (int s = 0; s < 50; ++s) xs.push_back(uniform_real(rng, -100, 100));
    for (int s = 0; s < 50; ++s) xs.push_back(double(uniform_int(rng, -60, 60)));
    for (double x : xs) {
      const bool composed = sign_value(bn_scalar(b, 0, x)) > 0;
      mismatches += composed != rule.fires(x);
    }
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(BruteForce, PointQueryMatchesPredict) {
  Rng rng(8);
  for (int k = 0; k < 100; ++k) {
    auto net = tiny::random_network(rng);
    auto img = tiny::random_image(rng, net.input_shape);
    auto y = network_forward(net, img).values();
    const Label l = predict(y);
    auto v = brute_force_verify(net, make_property(img, 0, l, false, net.num_classes));
    EXPECT_EQ(v.stats.nodes, 1u);
    EXPECT_EQ(v.kind, violates(y, l) ? VerdictKind::Falsified : VerdictKind::Verified);
  }
}

// 4-input toy, eps = 1, 81 grid points. Y_1 - Y_0 = 2 * X_3, so the only
// counterexamples have X_3 >= 0; the odometer reaches the first one on its
// third point.
TEST(BruteForce, FourInputToy) {
  auto net = NetworkBuilder({2, 2, 1}, 2).flatten().dense(2).build();
  std::get<QDense>(net.layers[1]).weights = {1, 1, 1, -1, 1, 1, 1, 1};
  Tensor img({2, 2, 1}, {3, 1, 4, -1});
  ASSERT_EQ(predict(net, img), 0u);
  auto prop = make_property(img, 1, 0, false, 2);
  auto v = brute_force_verify(net, prop);
  EXPECT_EQ(v.kind, VerdictKind::Falsified);
  ASSERT_TRUE(v.witness);
  EXPECT_EQ(v.witness->input_values, (std::vector<double>{2, 0, 3, 0}));
  EXPECT_EQ(v.witness->output_values, (std::vector<double>{5, 5}));
  EXPECT_TRUE(check_witness(net, prop, *v.witness));
  EXPECT_EQ(v.stats.nodes, 3u);
  auto robust = brute_force_verify(net, make_property(Tensor({2, 2, 1}, {3, 1, 4, -5}), 1, 0, false, 2));
  EXPECT_EQ(robust.kind, VerdictKind::Verified);
  EXPECT_EQ(robust.stats.nodes, 81u);
}

TEST(BruteForce, BudgetRefusal) {
  auto net = build_arch_xnor(6, 6, 3);
  auto prop = make_property(Tensor({6, 6, 3}, 100.0), 5, 0, false, 3);
  EXPECT_THROW(brute_force_verify(net, prop), BudgetExceeded);
  auto small = make_property(Tensor({2, 2, 1}, 1.0), 1, 0, false, 2);
  auto tiny_net = NetworkBuilder({2, 2, 1}, 2).flatten().dense(2).build();
  EXPECT_THROW(brute_force_verify(tiny_net, small, 80), BudgetExceeded);
  EXPECT_NO_THROW(brute_force_verify(tiny_net, small, 81));
}

TEST(BruteForce, BallNesting) {
  Rng rng(9);
  for (int k = 0; k < 60; ++k) {
    auto in = tiny::random_instance(rng, 2e4);
    std::vector<VerdictKind> kinds;
    for (double eps : {0.0, 1.0, 2.0}) {
      if (tiny::grid_points(in.prop.num_inputs, eps) > 2e4) break;
      kinds.push_back(brute_force_verify(in.net, make_property(in.image, eps, in.prop.target_label, false, in.net.num_classes)).kind);
    }
    for (std::size_t i = 1; i < kinds.size(); ++i)
      if (kinds[i - 1] == VerdictKind::Falsified) EXPECT_EQ(kinds[i], VerdictKind::Falsified);
  }
}

TEST(BruteForce, AgreesWithRecursiveOracle) {
  Rng rng(10);
  for (int k = 0; k < 80; ++k) {
    auto in = tiny::random_instance(rng, 5e3);
    const bool cex = oracle::grid_has_counterexample(in.net, in.prop);
    EXPECT_EQ(brute_force_verify(in.net, in.prop).kind, cex ? VerdictKind::Falsified : VerdictKind::Verified);
  }
}

TEST(Bab, AgreesWithBruteForce) {
  Rng rng(11);
  int fals = 0, ver = 0;
  for (int k = 0; k < 150; ++k) {
    auto in = tiny::random_instance(rng);
    auto b = brute_force_verify(in.net, in.prop);
    auto v = bab_verify(in.net, in.prop, {60, 1'000'000, true});
    ASSERT_EQ(v.kind, b.kind) << "instance " << k;
    if (v.kind == VerdictKind::Falsified) {
      ++fals;
      ASSERT_TRUE(v.witness);
      EXPECT_TRUE(check_witness(in.net, in.prop, *v.witness));
    } else {
      ++ver;
    }
  }
  EXPECT_GT(fals, 10);
  EXPECT_GT(ver, 10);
}

TEST(Bab, RootPruning) {
  Rng rng(12);
  int seen = 0;
  for (int k = 0; k < 200 && seen < 20; ++k) {
    auto in = tiny::random_instance(rng);
    if (verify_ibp(in.net, in.prop).kind != VerdictKind::Verified) continue;
    ++seen;
    auto v = bab_verify(in.net, in.prop);
    EXPECT_EQ(v.kind, VerdictKind::Verified);
    EXPECT_EQ(v.stats.nodes, 1u);
  }
  EXPECT_GT(seen, 0);
}

TEST(Bab, ZeroTimeoutAndNodeLimit) {
  Rng rng(13);
  auto in = tiny::random_instance(rng);
  auto v = bab_verify(in.net, in.prop, {0, 100, true});
  EXPECT_EQ(v.kind, VerdictKind::Timeout);
  EXPECT_EQ(v.stats.nodes, 0u);
  // A hard instance with a one-node budget ends Unknown unless the root decides it.
  auto net = build_arch_xnor(8, 8, 10);
  randomize_network(net, 3);
  auto img = tiny::random_image(rng, net.input_shape, 255);
  auto prop = make_property(img, 3, predict(net, img), false, 10);
  auto w = bab_verify(net, prop, {60, 1, true});
  EXPECT_TRUE(w.kind == VerdictKind::Unknown || w.kind == VerdictKind::Falsified || w.kind == VerdictKind::Verified);
  EXPECT_LE(w.stats.nodes, 1u);
}

TEST(Bab, ContinuousModeIsSound) {
  Rng rng(14);
  for (int k = 0; k < 60; ++k) {
    auto in = tiny::random_instance(rng);
    auto v = bab_verify(in.net, in.prop, {10, 2000, false});
    if (v.kind == VerdictKind::Falsified) {
      ASSERT_TRUE(v.witness);
      EXPECT_TRUE(check_witness(in.net, in.prop, *v.witness));
    }
    if (v.kind == VerdictKind::Verified) EXPECT_FALSE(oracle::grid_has_counterexample(in.net, in.prop));
  }
}
