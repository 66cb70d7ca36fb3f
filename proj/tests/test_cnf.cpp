#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "bnnv/bnnv.hpp"
#include "support/oracles.hpp"
#include "support/tiny.hpp"

using namespace bnnv;

namespace {

bool holds(const std::vector<int>& lits, const std::vector<bool>& assignment, std::size_t k, bool at_least) {
  std::size_t c = 0;
  for (int l : lits) c += assignment[std::size_t(std::abs(l))] == (l > 0);
  return at_least ? c >= k : c <= k;
}

std::vector<int> random_literals(Rng& rng, int vars, std::size_t n) {
  std::vector<int> v(static_cast<std::size_t>(vars));
  for (int i = 0; i < vars; ++i) v[std::size_t(i)] = i + 1;
  shuffle(v, rng);
  v.resize(n);
  for (auto& l : v)
    if (rng() & 1) l = -l;
  return v;
}

std::vector<int> assumption(std::uint64_t m, int vars) {
  std::vector<int> a;
  for (int i = 0; i < vars; ++i) a.push_back((m >> i & 1) ? i + 1 : -(i + 1));
  return a;
}

std::vector<bool> as_model(std::uint64_t m, int vars) {
  std::vector<bool> b(std::size_t(vars) + 1);
  for (int i = 0; i < vars; ++i) b[std::size_t(i) + 1] = m >> i & 1;
  return b;
}

}  // namespace

TEST(Cardinality, AtLeastOneIsASingleClause) {
  CnfFormula f;
  const int a = f.new_var(), b = f.new_var();
  encode_at_least(f, {a, b}, 1);
  EXPECT_EQ(f.num_vars, 2);
  ASSERT_EQ(f.clauses.size(), 1u);
  EXPECT_EQ(f.clauses[0], (Clause{a, b}));
}

TEST(Cardinality, EdgeCases) {
  CnfFormula f;
  for (int i = 0; i < 3; ++i) f.new_var();
  encode_at_least(f, {1, 2, 3}, 4);
  EXPECT_FALSE(solve(f));
  CnfFormula g;
  for (int i = 0; i < 3; ++i) g.new_var();
  encode_at_most(g, {1, 2, 3}, 3);
  encode_at_least(g, {1, 2, 3}, 0);
  EXPECT_TRUE(g.clauses.empty());
  EXPECT_EQ(count_models(g), 8u);
  encode_at_most(g, {1, 2, 3}, 0);
  EXPECT_EQ(count_models(g), 1u);
}

TEST(Cardinality, SixVariableConstraintsMatchEnumeration) {
  Rng rng(1);
  for (int k = 0; k < 300; ++k) {
    const int vars = 6;
    const std::size_t n = 1 + uniform_below(rng, 6), bound = uniform_below(rng, n + 2);
    const auto lits = random_literals(rng, vars, n);
    for (int mode = 0; mode < 3; ++mode) {
      CnfFormula f;
      for (int i = 0; i < vars; ++i) f.new_var();
      int r = 0;
      if (mode == 0) encode_at_most(f, lits, bound);
      if (mode == 1) encode_at_least(f, lits, bound);
      if (mode == 2) r = reify_at_least(f, lits, std::int64_t(bound));
      Dpll solver(f);
      for (std::uint64_t m = 0; m < 64; ++m) {
        const auto truth = as_model(m, vars);
        const bool want = holds(lits, truth, bound, mode != 0);
        auto a = assumption(m, vars);
        if (mode == 2) {
          if (r == kTrue || r == kFalse) {
            EXPECT_EQ(r == kTrue, want);
            continue;
          }
          auto pos = a, neg = a;
          pos.push_back(r);
          neg.push_back(-r);
          EXPECT_EQ(solver.solve(pos).has_value(), want);
          EXPECT_EQ(solver.solve(neg).has_value(), !want);
        } else {
          auto model = solver.solve(a);
          EXPECT_EQ(model.has_value(), want) << "n=" << n << " k=" << bound << " mode=" << mode;
          if (model) EXPECT_TRUE(satisfies(f, *model));
        }
      }
    }
  }
}

TEST(Cardinality, SequentialCounterUsesNTimesKRegisters) {
  for (std::size_t n = 2; n <= 9; ++n)
    for (std::size_t k = 1; k < n; ++k) {
      CnfFormula f;
      std::vector<int> lits;
      for (std::size_t i = 0; i < n; ++i) lits.push_back(f.new_var());
      encode_at_most(f, lits, k);
      EXPECT_EQ(std::size_t(f.num_vars) - n, n * k);
    }
}

TEST(Dpll, AgreesWithModelCounting) {
  Rng rng(2);
  int sat = 0, unsat = 0;
  for (int k = 0; k < 400; ++k) {
    CnfFormula f;
    const int vars = 3 + int(uniform_below(rng, 10));
    for (int i = 0; i < vars; ++i) f.new_var();
    const std::size_t clauses = uniform_below(rng, std::size_t(6 * vars));
    for (std::size_t c = 0; c < clauses; ++c) f.add(random_literals(rng, vars, 1 + uniform_below(rng, 3)));
    const auto models = count_models(f);
    auto model = solve(f);
    EXPECT_EQ(model.has_value(), models > 0);
    if (model) {
      ++sat;
      EXPECT_TRUE(satisfies(f, *model));
    } else {
      ++unsat;
    }
  }
  EXPECT_GT(sat, 50);
  EXPECT_GT(unsat, 50);
}

TEST(Dimacs, RoundTrip) {
  Rng rng(3);
  for (int k = 0; k < 50; ++k) {
    CnfFormula f;
    const int vars = 1 + int(uniform_below(rng, 20));
    for (int i = 0; i < vars; ++i) f.new_var();
    for (std::size_t c = uniform_below(rng, 30); c > 0; --c)
      f.add(random_literals(rng, vars, 1 + uniform_below(rng, std::size_t(std::min(vars, 4)))));
    const auto text = render_dimacs(f, {"generated"});
    EXPECT_EQ(text.rfind("c generated\np cnf ", 0), 0u);
    EXPECT_EQ(parse_dimacs(text), f);
  }
}

TEST(Dimacs, MalformedInput) {
  EXPECT_THROW(parse_dimacs("1 2 0\n"), FormatError);
  EXPECT_THROW(parse_dimacs("p cnf 2 1\n1 3 0\n"), FormatError);
  EXPECT_THROW(parse_dimacs("p cnf 2 2\n1 2 0\n"), FormatError);
  EXPECT_THROW(parse_dimacs("p cnf 2 1\n1 2\n"), FormatError);
  EXPECT_THROW(parse_dimacs("p dnf 2 1\n1 2 0\n"), FormatError);
  auto f = parse_dimacs("c x\np cnf 3 2\n1 -3\n 0 2 0\n");
  EXPECT_EQ(f.clauses, (std::vector<Clause>{{1, -3}, {2}}));
}

TEST(ExportCnf, FixedPhasesMatchBinaryForwardPass) {
  Rng rng(4);
  int cases = 0, sat = 0, unsat = 0;
  for (; cases < 80; ++cases) {
    auto net = tiny::binary_network(rng, 12);
    const std::size_t q = first_binary_layer(net);
    const std::size_t np = shape_size(layer_shapes(net)[q]);
    const Label t = uniform_below(rng, net.num_classes);
    auto prop = make_property(Tensor(net.input_shape, 1.0), 1, t, false, net.num_classes);
    for (std::uint64_t m = 0; m < (std::uint64_t{1} << np); m += 1 + uniform_below(rng, 64)) {
      std::vector<Phase> phases(np);
      for (std::size_t i = 0; i < np; ++i) phases[i] = (m >> i & 1) ? 1 : -1;
      auto ex = export_cnf(net, prop, phases);
      const bool want = tiny::phase_counterexample(net, q, phases, t);
      const bool got = solve(ex.formula).has_value();
      ASSERT_EQ(got, want) << "case " << cases;
      (got ? sat : unsat)++;
    }
  }
  EXPECT_GT(sat, 20);
  EXPECT_GT(unsat, 20);
}

TEST(ExportCnf, FreePhasesMatchEnumeration) {
  Rng rng(5);
  for (int k = 0; k < 60; ++k) {
    auto net = tiny::binary_network(rng, 10);
    const std::size_t q = first_binary_layer(net);
    const std::size_t np = shape_size(layer_shapes(net)[q]);
    const Label t = uniform_below(rng, net.num_classes);
    auto prop = make_property(Tensor(net.input_shape, 1.0), 1, t, false, net.num_classes);
    std::vector<Phase> phases(np);
    for (auto& p : phases) p = Phase(int(uniform_below(rng, 3)) - 1);
    auto ex = export_cnf(net, prop, phases);
    auto model = solve(ex.formula);
    ASSERT_EQ(model.has_value(), tiny::any_completion(net, q, phases, t)) << "case " << k;
    if (model) {
      // The model's phase bits are a completion that really is a counterexample.
      std::vector<Phase> chosen(np);
      for (std::size_t i = 0; i < np; ++i) chosen[i] = (*model)[std::size_t(ex.phase_vars[i])] ? 1 : -1;
      for (std::size_t i = 0; i < np; ++i)
        if (phases[i] != 0) EXPECT_EQ(chosen[i], phases[i]);
      EXPECT_TRUE(tiny::phase_counterexample(net, q, chosen, t));
    }
  }
}

TEST(ExportCnf, PhasesFromPointAndIbp) {
  Rng rng(6);
  for (int k = 0; k < 40; ++k) {
    auto net = tiny::binary_network(rng, 12);
    auto img = tiny::random_image(rng, net.input_shape);
    const Label l = predict(net, img);
    const auto point = phases_from_point(net, img);
    auto prop = make_property(img, 0, l, false, net.num_classes);
    EXPECT_EQ(solve(export_cnf(net, prop, point).formula).has_value(),
              violates(network_forward(net, img).values(), l));
    auto ball = make_property(img, 2, l, false, net.num_classes);
    const auto ibp = phases_from_ibp(net, IntervalTensor::from_property(ball, net.input_shape));
    for (std::size_t i = 0; i < ibp.size(); ++i)
      if (ibp[i] != 0) EXPECT_EQ(ibp[i], point[i]);
    // UNSAT with IBP phases means no grid point is a counterexample.
    if (tiny::grid_points(ball.num_inputs, 2) <= 1e5 && !solve(export_cnf(net, ball, ibp).formula))
      EXPECT_FALSE(oracle::grid_has_counterexample(net, ball));
  }
}

TEST(ExportCnf, VariableMapNamesEveryActivation) {
  Rng rng(7);
  auto net = tiny::binary_network(rng, 12);
  auto prop = make_property(Tensor(net.input_shape, 1.0), 0, 0, false, net.num_classes);
  auto ex = export_cnf(net, prop, phases_from_point(net, Tensor(net.input_shape, 1.0)));
  const auto text = render_var_map(ex);
  EXPECT_EQ(text.rfind("c literal layer neuron role\n", 0), 0u);
  std::set<int> seen;
  for (const auto& v : ex.vars) {
    EXPECT_TRUE(v.role == "phase" || v.role == "act");
    EXPECT_GT(v.literal, 0);
    EXPECT_LE(v.literal, ex.formula.num_vars);
    seen.insert(v.literal);
  }
  EXPECT_EQ(seen.size(), ex.vars.size());
  EXPECT_EQ(ex.phase_vars.size(), shape_size(layer_shapes(net)[ex.first_binary_layer]));
}

TEST(ExportCnf, Errors) {
  auto net = NetworkBuilder({3, 3, 1}, 2).conv(1, 2, 2).batchnorm().conv(2, 1, 1).batchnorm().maxpool().flatten().dense(2).build();
  auto prop = make_property(Tensor({3, 3, 1}, 1.0), 0, 0, false, 2);
  try {
    export_cnf(net, prop, std::vector<Phase>(3, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("first layer phases not fixed"), std::string::npos);
  }
  try {
    export_cnf(net, prop, std::vector<Phase>(4, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("not foldable"), std::string::npos);
  }
  auto real_only = NetworkBuilder({2}, 2).dense(2).build();
  EXPECT_THROW(export_cnf(real_only, make_property(Tensor({2}, 1.0), 0, 0, false, 2), {}), Error);
}
