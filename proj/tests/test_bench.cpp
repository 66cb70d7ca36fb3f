#include <gtest/gtest.h>

#include <regex>

#include "bnnv/bnnv.hpp"
#include "support/oracles.hpp"
#include "support/tiny.hpp"

using namespace bnnv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = fs::temp_directory_path() / fmt::format("bnnv_{}_{}_{}", tag, ::getpid(), counter++);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) { return read_text(p); }

// Three small models with distinct input sizes and self-labeled images.
struct SmallSuite {
  std::vector<fs::path> models;
  std::vector<LabeledImage> images;
};

SmallSuite small_suite(const fs::path& dir) {
  SmallSuite s;
  std::uint64_t next = 0;
  for (std::size_t size : {6, 7, 8}) {
    auto net = build_arch_xnor(size, size);
    randomize_network(net, size);
    const auto p = dir / fmt::format("xnor_{}.onnx", size);
    onnx::save_model(net, p);
    s.models.push_back(p);
    for (auto& li : synth_images(net, 5, size, next)) s.images.push_back(std::move(li));
    next += 5;
  }
  return s;
}

// Tiny instances written to disk, for running the harness end to end.
std::vector<BenchmarkInstance> tiny_benchmark(Rng& rng, const fs::path& dir, std::size_t n) {
  std::vector<BenchmarkInstance> out;
  for (std::size_t k = 0; k < n; ++k) {
    auto in = tiny::random_instance(rng, 2e4);
    const auto m = dir / fmt::format("m{}.onnx", k);
    const auto p = dir / fmt::format("p{}.vnnlib", k);
    onnx::save_model(in.net, m);
    write_text(p, render_property(in.prop));
    out.push_back({m, p, 60.0, p.filename().string()});
  }
  return out;
}

}  // namespace

TEST(Ppm, SingleRedPixel) {
  const std::string raw = std::string("P6\n1 1\n255\n") + char(0xff) + char(0) + char(0);
  auto t = load_ppm(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  EXPECT_EQ(t.shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(t.values(), (std::vector<double>{255, 0, 0}));
}

TEST(Ppm, CommentsAndTruncation) {
  const std::string raw = std::string("P6 # made by hand\n2 # w\n1\n255\n") + "abcdef";
  auto t = load_ppm(std::span(reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()));
  EXPECT_EQ(t.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(t[3], 'd');
  const std::string cut = raw.substr(0, raw.size() - 1);
  EXPECT_THROW(load_ppm(std::span(reinterpret_cast<const std::uint8_t*>(cut.data()), cut.size())), FormatError);
  const std::string p3 = "P3\n1 1\n255\n0 0 0";
  EXPECT_THROW(load_ppm(std::span(reinterpret_cast<const std::uint8_t*>(p3.data()), p3.size())), FormatError);
  const std::string deep = std::string("P6\n1 1\n65535\n") + "abcdef";
  EXPECT_THROW(load_ppm(std::span(reinterpret_cast<const std::uint8_t*>(deep.data()), deep.size())), FormatError);
}

TEST(Ppm, WriteReadIdentity) {
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    auto img = tiny::random_image(rng, {1 + uniform_below(rng, 40), 1 + uniform_below(rng, 40), 3}, 255);
    EXPECT_EQ(load_ppm(write_ppm(img)), img);
  }
  EXPECT_THROW(write_ppm(Tensor({1, 1, 3}, 0.5)), Error);
  EXPECT_THROW(write_ppm(Tensor({1, 1, 1}, 0.0)), ShapeError);
}

TEST(ImageDir, LabelsCsvAndGtsrbAnnotations) {
  TempDir d("imgs");
  Rng rng(2);
  std::vector<LabeledImage> imgs;
  for (std::uint64_t i = 0; i < 4; ++i)
    imgs.push_back({tiny::random_image(rng, {3, 2, 3}, 255), 10 + i, i % 3, fmt::format("{:05}.ppm", 10 + i)});
  save_image_dir(imgs, d.path);
  auto back = load_image_dir(d.path);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(back[i].image, imgs[i].image);
    EXPECT_EQ(back[i].label, imgs[i].label);
    EXPECT_EQ(back[i].index, imgs[i].index);
  }
  fs::remove(d.path / "labels.csv");
  EXPECT_THROW(load_image_dir(d.path), Error);
  write_text(d.path / "GT-final_test.csv",
             "Filename;Width;Height;Roi.X1;Roi.Y1;Roi.X2;Roi.Y2;ClassId\n00010.ppm;2;3;0;0;1;2;7\n00011.ppm;2;3;0;0;1;2;42\n");
  back = load_image_dir(d.path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].label, 7u);
  EXPECT_EQ(back[1].label, 42u);
}

TEST(Generate, DefaultSuiteShapeAndBudget) {
  TempDir d("gen");
  auto suite = small_suite(d.path);
  const auto out = d.path / "bench";
  auto instances = generate_benchmark(suite.models, suite.images, {}, out);
  EXPECT_EQ(instances.size(), 45u);
  EXPECT_EQ(total_budget(instances), 21600.0);
  std::regex name(R"(vnnlib/model_(\d+)_idx_(\d+)_eps_(\d+\.\d{5})\.vnnlib)");
  std::size_t vnnlib_files = 0;
  for (const auto& e : fs::directory_iterator(out / "vnnlib")) vnnlib_files += e.is_regular_file();
  EXPECT_EQ(vnnlib_files, 45u);
  for (const auto& in : instances) {
    EXPECT_TRUE(std::regex_match(in.name, name)) << in.name;
    EXPECT_TRUE(fs::exists(in.property_path));
    EXPECT_TRUE(fs::exists(in.model_path));
    EXPECT_EQ(in.timeout_seconds, 480.0);
  }
  auto reread = read_instances(out / "instances.csv");
  ASSERT_EQ(reread.size(), 45u);
  for (std::size_t i = 0; i < 45; ++i) {
    EXPECT_EQ(fs::canonical(reread[i].property_path), fs::canonical(instances[i].property_path));
    EXPECT_EQ(fs::canonical(reread[i].model_path), fs::canonical(instances[i].model_path));
  }
  const auto rows = slurp(out / "instances.csv");
  EXPECT_EQ(rows.substr(0, rows.find('\n')).find("onnx/xnor_6.onnx,vnnlib/model_6_idx_"), 0u);
}

TEST(Generate, ByteDeterministicUnderSeed) {
  TempDir d("det");
  auto suite = small_suite(d.path);
  BenchmarkConfig cfg;
  cfg.seed = 7;
  generate_benchmark(suite.models, suite.images, cfg, d.path / "a");
  generate_benchmark(suite.models, suite.images, cfg, d.path / "b");
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(d.path / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), d.path / "a");
    EXPECT_EQ(read_bytes(e.path()), read_bytes(d.path / "b" / rel)) << rel;
    ++compared;
  }
  EXPECT_EQ(compared, 45u + 3u + 1u);
  cfg.seed = 8;
  auto other = generate_benchmark(suite.models, suite.images, cfg, d.path / "c");
  EXPECT_NE(slurp(d.path / "a" / "instances.csv"), slurp(d.path / "c" / "instances.csv"));
}

TEST(Generate, ZeroEpsilonAndErrors) {
  TempDir d("zero");
  auto suite = small_suite(d.path);
  BenchmarkConfig cfg;
  cfg.epsilons = {0};
  auto instances = generate_benchmark(suite.models, suite.images, cfg, d.path / "z");
  EXPECT_EQ(instances.size(), 9u);
  for (const auto& in : instances) {
    auto p = load_property(in.property_path);
    for (const auto& b : p.input_bounds) EXPECT_EQ(b.lo, b.hi);
    ASSERT_TRUE(p.source);
    EXPECT_EQ(p.source->epsilon, 0.0);
  }
  cfg.images_per_model = 6;
  EXPECT_THROW(generate_benchmark(suite.models, suite.images, cfg, d.path / "e"), Error);
  auto dup = suite.models;
  dup.push_back(suite.models[0]);
  EXPECT_THROW(generate_benchmark(dup, suite.images, {}, d.path / "f"), Error);
}

TEST(Instances, ParseAndReject) {
  auto v = parse_instances("onnx/a.onnx,vnnlib/b.vnnlib,480\n\nonnx/a.onnx,vnnlib/c.vnnlib,30.5\n", "/base");
  ASSERT_EQ(v.size(), 2u);
  EXPECT_EQ(v[0].model_path, fs::path("/base/onnx/a.onnx"));
  EXPECT_EQ(v[1].timeout_seconds, 30.5);
  EXPECT_EQ(render_instances(v, "/base"), "onnx/a.onnx,vnnlib/b.vnnlib,480\nonnx/a.onnx,vnnlib/c.vnnlib,30.5\n");
  EXPECT_THROW(parse_instances("a,b\n", "/"), FormatError);
  EXPECT_THROW(parse_instances("a,b,soon\n", "/"), FormatError);
  EXPECT_THROW(parse_instances("a,b,0\n", "/"), FormatError);
}

TEST(Run, BabAgreesWithBruteForceAndWitnessesCheck) {
  TempDir d("run");
  Rng rng(3);
  auto instances = tiny_benchmark(rng, d.path, 40);
  RunConfig bab;
  bab.witness_dir = d.path / "wit";
  RunConfig brute;
  brute.engine = Engine::Brute;
  auto a = run_instances(instances, bab), b = run_instances(instances, brute);
  int sat = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    EXPECT_EQ(a[i].verdict, b[i].verdict) << instances[i].name;
    EXPECT_EQ(a[i].instance, instances[i].name);
    if (a[i].verdict == "sat") {
      ++sat;
      ASSERT_FALSE(a[i].witness_path.empty());
      auto w = parse_witness(slurp(a[i].witness_path));
      EXPECT_TRUE(check_witness(onnx::load_model(instances[i].model_path), load_property(instances[i].property_path), w));
    } else {
      EXPECT_TRUE(a[i].witness_path.empty());
    }
  }
  EXPECT_GT(sat, 0);
  EXPECT_TRUE(b[0].witness_path.empty());
}

TEST(Run, JobCountDoesNotChangeVerdicts) {
  TempDir d("jobs");
  Rng rng(4);
  auto instances = tiny_benchmark(rng, d.path, 30);
  RunConfig one, eight;
  eight.jobs = 8;
  auto a = run_instances(instances, one), b = run_instances(instances, eight);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].instance, b[i].instance);
    EXPECT_EQ(a[i].verdict, b[i].verdict);
  }
}

TEST(Run, TimeoutsAndErrors) {
  TempDir d("tmo");
  Rng rng(5);
  auto instances = tiny_benchmark(rng, d.path, 2);
  instances[0].timeout_seconds = 1e-12;
  instances[1].property_path = d.path / "missing.vnnlib";
  auto r = run_instances(instances);
  EXPECT_EQ(r[0].verdict, "timeout");
  EXPECT_EQ(r[1].verdict, "error");
  EXPECT_FALSE(r[1].penalty);
  auto big = build_arch_xnor(8, 8, 3);
  const auto m = d.path / "big.onnx";
  onnx::save_model(big, m);
  const auto p = d.path / "big.vnnlib";
  write_text(p, generate_property(Tensor({8, 8, 3}, 100.0), 5, 0, false, 3));
  RunConfig brute;
  brute.engine = Engine::Brute;
  auto u = run_instances({{m, p, 60.0, "big"}}, brute);
  EXPECT_EQ(u[0].verdict, "unknown");
}

TEST(Results, RenderParseAndPenalty) {
  std::vector<VerdictRecord> recs{{"a.vnnlib", "sat", 1.25, "w/a.counterexample", false, ""},
                                  {"b.vnnlib", "unsat", 0.5, "", false, ""},
                                  {"c.vnnlib", "error", 2, "w/c.counterexample", true, "bad"},
                                  {"d.vnnlib", "timeout", 480, "", false, ""}};
  const auto text = render_results(recs);
  EXPECT_EQ(text.substr(0, text.find('\n')), "instance,verdict,seconds,witness_path");
  EXPECT_NE(text.find("a.vnnlib,sat,1.250,w/a.counterexample\n"), std::string::npos);
  auto back = parse_results(text);
  ASSERT_EQ(back.size(), 4u);
  EXPECT_TRUE(back[2].penalty);
  EXPECT_FALSE(back[0].penalty);
  auto c = counts_from_results("me", back);
  EXPECT_EQ(c.verified, 1u);
  EXPECT_EQ(c.falsified, 1u);
  EXPECT_EQ(c.penalty, 1u);
  EXPECT_THROW(parse_results("x,maybe,1,\n"), FormatError);
}

TEST(Score, CompetitionTable) {
  auto rows = score_results(parse_counts(
      "tool,verified,falsified,penalty\nMarabou,0,18,1\nPyRAT,0,7,1\nNeuralSAT,0,31,4\nalpha-beta-CROWN,0,39,3\n"));
  ASSERT_EQ(rows.size(), 4u);
  const std::int64_t scores[] = {30, -80, -290, -60};
  const double percents[] = {100, 0, 0, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rows[i].score, scores[i]);
    EXPECT_EQ(rows[i].percent, percents[i]);
  }
  const auto table = render_score_table(rows);
  EXPECT_NE(table.find("100%"), std::string::npos);
  EXPECT_NE(table.find("-290"), std::string::npos);
  EXPECT_NE(render_score_csv(rows).find("Marabou,0,18,0,1,30,100.00"), std::string::npos);
}

TEST(Score, EdgeCases) {
  EXPECT_THROW(score_results({}), Error);
  auto neg = score_results({{"x", 0, 0, 0, 1}, {"y", 0, 1, 0, 1}});
  EXPECT_EQ(neg[0].percent, 0);
  EXPECT_EQ(neg[1].percent, 0);
  auto half = score_results({{"x", 1, 1, 0, 0}, {"y", 0, 1, 0, 0}});
  EXPECT_EQ(half[1].percent, 50);
  std::vector<ToolCounts> tools{{"x"}, {"y"}};
  credit_fastest(tools, {{{"i1", "sat", 2.0, "", false, ""}, {"i2", "unsat", 1.0, "", false, ""}},
                         {{"i1", "sat", 1.0, "", false, ""}, {"i2", "unknown", 0.1, "", false, ""}}});
  EXPECT_EQ(tools[0].fastest, 1u);
  EXPECT_EQ(tools[1].fastest, 1u);
}
