// bnnverify: command-line front end for the bnnv toolkit.
//
// Exit codes: 0 verified / success, 1 falsified (or invalid witness for
// `check`), 2 unknown or timeout, 64 usage error, 65 input-format error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "bnnv/bnnv.hpp"

namespace fs = std::filesystem;
using namespace bnnv;

namespace {

constexpr int kExitSat = 1;
constexpr int kExitUnknown = 2;
constexpr int kExitUsage = 64;
constexpr int kExitFormat = 65;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(VerdictKind k) {
  switch (k) {
    case VerdictKind::Verified: return 0;
    case VerdictKind::Falsified: return kExitSat;
    default: return kExitUnknown;
  }
}

std::vector<double> parse_epsilons(const std::string& list) {
  std::vector<double> out;
  for (const auto& f : detail::split(list, ',')) {
    auto v = detail::parse_number<double>(detail::trim(f));
    if (!v || !(*v >= 0.0)) throw UsageError(fmt::format("bad epsilon '{}' in --epsilons", f));
    out.push_back(*v);
  }
  if (out.empty()) throw UsageError("--epsilons is empty");
  return out;
}

fs::path default_witness_path(const fs::path& property) {
  return fs::path(property.stem().string() + ".counterexample");
}

// Prints the verdict line, stats, and writes the witness if there is one.
int report(const Verdict& v, const Network& net, const RobustnessProperty& prop, const fs::path& witness_out) {
  fmt::print("{}\n", verdict_string(v.kind));
  fmt::print("nodes={} seconds={:.3f}\n", v.stats.nodes, v.stats.seconds);
  if (v.kind == VerdictKind::Falsified && v.witness) {
    if (!check_witness(net, prop, *v.witness)) throw Error("internal: counterexample failed the re-check");
    write_text(witness_out, render_witness(*v.witness));
    fmt::print("witness={}\n", witness_out.string());
  }
  return exit_code(v.kind);
}

// runs/bab/results.csv -> "bab"; anything else -> file stem.
std::string tool_name(const fs::path& results) {
  const auto parent = fs::absolute(results).parent_path().filename().string();
  return results.stem() == "results" && !parent.empty() ? parent : results.stem().string();
}

int cmd_inspect(const fs::path& model) {
  const Network net = onnx::load_model(model);
  const auto shapes = layer_shapes(net);
  fmt::print("input {}\n", shape_str(net.input_shape));
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    fmt::print("{:>3}  {:<22} {}{}\n", i, layer_name(net.layers[i]), shape_str(shapes[i + 1]),
               is_quantizing(net.layers[i]) ? "  sign(input)" : "");
  const auto p = count_params(net);
  fmt::print("classes={}\n", net.num_classes);
  fmt::print("binary={} real={} total={}\n", p.binary, p.real, p.total);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local-robustness verification toolkit for binarized neural networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "bnnverify 0.1.0");

  std::string model, property, witness, out, engine = "bab", epsilons = "1,3,5,10,15", arch = "a",
                                                 models_dir, images_dir, image, phases_mode = "ibp";
  std::vector<std::string> result_files;
  double timeout = 480.0, epsilon = 1.0;
  std::uint64_t seed = 0, max_nodes = 100'000, samples = 10'000, passes = 5, count = 10, first_index = 0;
  std::size_t jobs = 1, images_per_model = 3, size = 64, classes = 43;
  std::int64_t label = -1, index = 0;
  bool clip = false, csv = false, continuous = false;

  auto engine_opt = [&](CLI::App* c) {
    c->add_option("--engine", engine, "ibp, bab, falsify or brute")
        ->check(CLI::IsMember({"ibp", "bab", "falsify", "brute"}))
        ->capture_default_str();
  };

  auto* inspect = app.add_subcommand("inspect", "Print the layer chain and parameter counts of a model");
  inspect->add_option("model", model)->required()->check(CLI::ExistingFile);

  auto* generate = app.add_subcommand("generate", "Write the robustness property for one image");
  generate->add_option("--model", model)->required()->check(CLI::ExistingFile);
  generate->add_option("--image", image, "binary PPM")->required()->check(CLI::ExistingFile);
  generate->add_option("--epsilon", epsilon)->capture_default_str();
  generate->add_option("--label", label, "target label (default: the model's prediction)");
  generate->add_option("--index", index, "image index used in the file name")->capture_default_str();
  generate->add_option("--out", out, "output directory")->required();
  generate->add_flag("--clip", clip, "clip bounds to [0, 255]");

  auto* bench = app.add_subcommand("bench", "Generate a benchmark suite (onnx/, vnnlib/, instances.csv)");
  bench->add_option("--models", models_dir, "directory of .onnx models")->required()->check(CLI::ExistingDirectory);
  bench->add_option("--images", images_dir, "directory of labeled PPMs")->required()->check(CLI::ExistingDirectory);
  bench->add_option("--seed", seed)->capture_default_str();
  bench->add_option("--epsilons", epsilons)->capture_default_str();
  bench->add_option("--images-per-model", images_per_model)->capture_default_str();
  bench->add_option("--timeout", timeout)->capture_default_str();
  bench->add_option("--out", out)->required();
  bench->add_flag("--clip", clip);

  auto* verify = app.add_subcommand("verify", "Decide one property");
  verify->add_option("model", model)->required()->check(CLI::ExistingFile);
  verify->add_option("property", property)->required()->check(CLI::ExistingFile);
  engine_opt(verify);
  verify->add_option("--timeout", timeout)->capture_default_str();
  verify->add_option("--seed", seed)->capture_default_str();
  verify->add_option("--max-nodes", max_nodes)->capture_default_str();
  verify->add_flag("--continuous", continuous, "search real-valued inputs instead of the integer grid");
  verify->add_option("--witness", witness, "counterexample output (default: <property>.counterexample)");

  auto* fals = app.add_subcommand("falsify", "Search for a counterexample");
  fals->add_option("model", model)->required()->check(CLI::ExistingFile);
  fals->add_option("property", property)->required()->check(CLI::ExistingFile);
  fals->add_option("--seed", seed)->capture_default_str();
  fals->add_option("--samples", samples)->capture_default_str();
  fals->add_option("--passes", passes)->capture_default_str();
  fals->add_option("--timeout", timeout)->capture_default_str();
  fals->add_flag("--continuous", continuous);
  fals->add_option("--witness", witness);

  auto* check = app.add_subcommand("check", "Re-check a counterexample file");
  check->add_option("model", model)->required()->check(CLI::ExistingFile);
  check->add_option("property", property)->required()->check(CLI::ExistingFile);
  check->add_option("witness", witness)->required()->check(CLI::ExistingFile);

  auto* score = app.add_subcommand("score", "Score results.csv files or per-tool count tables");
  score->add_option("files", result_files)->required()->check(CLI::ExistingFile);
  score->add_flag("--csv", csv, "CSV instead of an aligned table");

  auto* run = app.add_subcommand("run", "Run an engine over instances.csv");
  run->add_option("instances", property, "instances.csv")->required()->check(CLI::ExistingFile);
  engine_opt(run);
  run->add_option("--jobs", jobs)->capture_default_str();
  run->add_option("--seed", seed)->capture_default_str();
  run->add_option("--max-nodes", max_nodes)->capture_default_str();
  run->add_option("--timeout", timeout, "override every instance timeout");
  run->add_flag("--continuous", continuous);
  run->add_option("--out", out, "directory for results.csv and witnesses")->required();

  auto* cnf = app.add_subcommand("export-cnf", "Write the binarized part of a query as DIMACS CNF");
  cnf->add_option("model", model)->required()->check(CLI::ExistingFile);
  cnf->add_option("property", property)->required()->check(CLI::ExistingFile);
  cnf->add_option("--phases", phases_mode, "first-layer phases: center or ibp")
      ->check(CLI::IsMember({"center", "ibp"}))
      ->capture_default_str();
  cnf->add_option("--out", out, "output .cnf path (a .map sidecar is written next to it)")->required();

  auto* synth_model = app.add_subcommand("synth-model", "Write a randomly initialised model");
  synth_model->add_option("--arch", arch)->check(CLI::IsMember({"a", "b", "xnor"}))->capture_default_str();
  synth_model->add_option("--size", size)->capture_default_str();
  synth_model->add_option("--classes", classes)->capture_default_str();
  synth_model->add_option("--seed", seed)->capture_default_str();
  synth_model->add_option("--out", out)->required();

  auto* synth_imgs = app.add_subcommand("synth-images", "Write random PPMs labeled by a model's own predictions");
  synth_imgs->add_option("--model", model)->required()->check(CLI::ExistingFile);
  synth_imgs->add_option("--count", count)->capture_default_str();
  synth_imgs->add_option("--seed", seed)->capture_default_str();
  synth_imgs->add_option("--first-index", first_index)->capture_default_str();
  synth_imgs->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  const double limit = timeout;
  try {
    if (*inspect) return cmd_inspect(model);

    if (*generate) {
      const Network net = onnx::load_model(model);
      const Tensor img = read_ppm(image);
      check_compatible(net, make_property(img, 0, 0, false, net.num_classes));
      const Label l = label >= 0 ? Label(label) : predict(net, img);
      if (index < 0) throw UsageError("--index must be non-negative");
      fs::create_directories(out);
      const fs::path p = fs::path(out) / property_filename(net.input_shape[0], std::uint64_t(index), epsilon);
      write_text(p, generate_property(img, epsilon, l, clip, net.num_classes,
                                      PropertySource{std::uint64_t(index), epsilon}));
      fmt::print("{}\n", p.string());
      return 0;
    }

    if (*bench) {
      std::vector<fs::path> models;
      for (const auto& e : fs::directory_iterator(models_dir))
        if (e.is_regular_file() && e.path().extension() == ".onnx") models.push_back(e.path());
      std::sort(models.begin(), models.end());
      BenchmarkConfig cfg;
      cfg.images_per_model = images_per_model;
      cfg.epsilons = parse_epsilons(epsilons);
      cfg.timeout_seconds = timeout;
      cfg.seed = seed;
      cfg.clip = clip;
      if (!(timeout > 0.0)) throw UsageError("--timeout must be positive");
      const auto instances = generate_benchmark(models, load_image_dir(images_dir), cfg, out);
      fmt::print("instances={} budget_seconds={}\n", instances.size(), total_budget(instances));
      fmt::print("{}\n", (fs::path(out) / "instances.csv").string());
      return 0;
    }

    if (*verify || *fals) {
      const Network net = onnx::load_model(model);
      const auto prop = load_property(property);
      check_compatible(net, prop);
      const fs::path wout = witness.empty() ? default_witness_path(property) : fs::path(witness);
      Verdict v;
      if (*fals) {
        AttackConfig a;
        a.max_samples = samples;
        a.seed = seed;
        a.greedy_passes = passes;
        a.integer_grid = !continuous;
        a.time_limit_seconds = limit;
        if (samples < 1) throw UsageError("--samples must be at least 1");
        v = falsify(net, prop, a);
      } else {
        v = run_engine(net, prop, {parse_engine(engine), limit, seed, max_nodes, !continuous});
      }
      return report(v, net, prop, wout);
    }

    if (*check) {
      const Network net = onnx::load_model(model);
      const auto prop = load_property(property);
      const auto w = parse_witness(read_text(witness));
      if (w.input_values.size() != prop.num_inputs) {
        fmt::print("invalid\nwitness has {} inputs, property has {}\n", w.input_values.size(), prop.num_inputs);
        return kExitSat;
      }
      if (!in_bounds(prop, w.input_values)) {
        fmt::print("invalid\ninput outside the property bounds\n");
        return kExitSat;
      }
      if (!check_witness(net, prop, w)) {
        fmt::print("invalid\nno output Y_j >= Y_{} at this input\n", prop.target_label);
        return kExitSat;
      }
      fmt::print("valid\n");
      return 0;
    }

    if (*score) {
      std::vector<ToolCounts> tools;
      std::vector<std::vector<VerdictRecord>> runs;
      bool all_results = true;
      for (const auto& f : result_files) {
        const auto text = read_text(f);
        if (text.rfind("instance,", 0) == 0) {
          runs.push_back(parse_results(text));
          tools.push_back(counts_from_results(tool_name(f), runs.back()));
        } else {
          all_results = false;
          for (auto& c : parse_counts(text)) tools.push_back(std::move(c));
        }
      }
      if (all_results && runs.size() > 1) credit_fastest(tools, runs);
      const auto rows = score_results(tools);
      fmt::print("{}", csv ? render_score_csv(rows) : render_score_table(rows));
      return 0;
    }

    if (*run) {
      auto instances = read_instances(property);
      if (run->count("--timeout")) {
        if (!(timeout > 0.0)) throw UsageError("--timeout must be positive");
        for (auto& in : instances) in.timeout_seconds = timeout;
      }
      RunConfig cfg;
      cfg.engine = parse_engine(engine);
      cfg.jobs = jobs;
      cfg.seed = seed;
      cfg.max_nodes = max_nodes;
      cfg.integer_grid = !continuous;
      cfg.witness_dir = fs::path(out) / "witnesses";
      if (jobs < 1) throw UsageError("--jobs must be at least 1");
      fs::create_directories(out);
      const auto records = run_instances(instances, cfg);
      write_text(fs::path(out) / "results.csv", render_results(records));
      std::map<std::string, std::size_t> tally;
      for (const auto& r : records) ++tally[r.verdict];
      for (const auto& [k, n] : tally) fmt::print("{}={} ", k, n);
      fmt::print("\n{}\n", (fs::path(out) / "results.csv").string());
      return 0;
    }

    if (*cnf) {
      const Network net = onnx::load_model(model);
      const auto prop = load_property(property);
      check_compatible(net, prop);
      std::vector<Phase> phases;
      if (phases_mode == "center") {
        std::vector<double> c(prop.num_inputs);
        for (std::size_t i = 0; i < c.size(); ++i)
          c[i] = prop.input_bounds[i].lo + (prop.input_bounds[i].hi - prop.input_bounds[i].lo) / 2;
        phases = phases_from_point(net, Tensor(net.input_shape, c));
      } else {
        phases = phases_from_ibp(net, IntervalTensor::from_property(prop, net.input_shape));
      }
      const auto ex = export_cnf(net, prop, phases);
      const std::size_t free = std::size_t(std::count(phases.begin(), phases.end(), Phase{0}));
      write_text(out, render_dimacs(ex.formula, {fmt::format("{} phases={} free={}", fs::path(property).filename().string(),
                                                             phases.size(), free)}));
      fs::path map = out;
      map.replace_extension(".map");
      write_text(map, render_var_map(ex));
      fmt::print("vars={} clauses={} free_phases={}\n", ex.formula.num_vars, ex.formula.clauses.size(), free);
      return 0;
    }

    if (*synth_model) {
      Network net = build_arch(arch, size, size, classes);
      randomize_network(net, seed);
      onnx::save_model(net, out);
      const auto p = count_params(net);
      fmt::print("{}\nbinary={} real={} total={}\n", out, p.binary, p.real, p.total);
      return 0;
    }

    if (*synth_imgs) {
      const Network net = onnx::load_model(model);
      save_image_dir(synth_images(net, count, seed, first_index), out);
      fmt::print("{}\n", (fs::path(out) / "labels.csv").string());
      return 0;
    }
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitFormat;
  }
  return kExitUsage;
}
