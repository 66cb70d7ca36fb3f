#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "bnnv/compiled.hpp"
#include "bnnv/falsifier.hpp"
#include "bnnv/io.hpp"
#include "bnnv/log.hpp"
#include "bnnv/onnx.hpp"
#include "bnnv/ppm.hpp"
#include "bnnv/random.hpp"
#include "bnnv/verifier.hpp"
#include "bnnv/vnnlib.hpp"

namespace bnnv {

namespace fs = std::filesystem;

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t p = line.find(sep, start);
    out.emplace_back(trim(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start)));
    if (p == std::string_view::npos) return out;
    start = p + 1;
  }
}

inline std::vector<std::string> lines(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t p = text.find('\n', start);
    if (p == std::string_view::npos) p = text.size();
    std::string_view l = text.substr(start, p - start);
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    out.emplace_back(l);
    start = p + 1;
  }
  return out;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Labeled image directories.

struct LabeledImage {
  Tensor image;
  std::uint64_t index = 0;
  Label label = 0;
  std::string name;
};

// Reads every *.ppm in `dir` (sorted by name). Labels come from `labels.csv`
// ("filename,label") or a GTSRB annotation file `GT-*.csv` (semicolon
// separated with Filename and ClassId columns). The image index is the numeric
// file stem when there is one, else the position in sorted order.
inline std::vector<LabeledImage> load_image_dir(const fs::path& dir) {
  std::map<std::string, Label> labels;
  bool have_labels = false;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string name = e.path().filename().string();
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".ppm") files.push_back(e.path());
    const bool plain = name == "labels.csv";
    const bool gtsrb = name.rfind("GT-", 0) == 0 && ext == ".csv";
    if (!plain && !gtsrb) continue;
    have_labels = true;
    const auto rows = detail::lines(read_text(e.path()));
    std::size_t file_col = 0, label_col = 1;
    const char sep = plain ? ',' : ';';
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (detail::trim(rows[r]).empty()) continue;
      auto f = detail::split(rows[r], sep);
      if (r == 0 && gtsrb) {
        auto fi = std::find(f.begin(), f.end(), "Filename");
        auto ci = std::find(f.begin(), f.end(), "ClassId");
        if (fi == f.end() || ci == f.end())
          throw FormatError(fmt::format("{}: missing Filename/ClassId header", name), 1, "line");
        file_col = std::size_t(fi - f.begin());
        label_col = std::size_t(ci - f.begin());
        continue;
      }
      if (std::max(file_col, label_col) >= f.size())
        throw FormatError(fmt::format("{}: too few fields", name), r + 1, "line");
      auto label = detail::parse_number<Label>(f[label_col]);
      if (!label) {
        if (r == 0) continue;  // header
        throw FormatError(fmt::format("{}: bad label '{}'", name, f[label_col]), r + 1, "line");
      }
      labels[f[file_col]] = *label;
    }
  }
  if (!have_labels) throw Error(fmt::format("no labels.csv or GT-*.csv in '{}'", dir.string()));
  std::sort(files.begin(), files.end());
  std::vector<LabeledImage> out;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const std::string name = files[i].filename().string();
    auto it = labels.find(name);
    if (it == labels.end()) {
      log().warn("image {} has no label; skipped", name);
      continue;
    }
    LabeledImage li;
    li.image = read_ppm(files[i]);
    li.label = it->second;
    li.name = name;
    li.index = detail::parse_number<std::uint64_t>(files[i].stem().string()).value_or(i);
    out.push_back(std::move(li));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Instances.

struct BenchmarkInstance {
  fs::path model_path;
  fs::path property_path;
  double timeout_seconds = 480.0;
  std::string name;  // property entry as written in instances.csv
};

struct BenchmarkConfig {
  std::size_t images_per_model = 3;
  std::vector<double> epsilons{1, 3, 5, 10, 15};
  double timeout_seconds = 480.0;
  std::uint64_t seed = 0;
  bool clip = false;
};

inline std::string format_timeout(double t) { return fmt::format("{}", t); }

// One row per instance: "onnx_path,vnnlib_path,timeout", paths relative to the
// CSV's directory, no header.
inline std::string render_instances(const std::vector<BenchmarkInstance>& instances, const fs::path& base) {
  std::string out;
  for (const auto& in : instances)
    out += fmt::format("{},{},{}\n", fs::relative(in.model_path, base).generic_string(),
                       fs::relative(in.property_path, base).generic_string(), format_timeout(in.timeout_seconds));
  return out;
}

inline std::vector<BenchmarkInstance> parse_instances(std::string_view text, const fs::path& base) {
  std::vector<BenchmarkInstance> out;
  const auto rows = detail::lines(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (detail::trim(rows[r]).empty()) continue;
    auto f = detail::split(rows[r], ',');
    if (f.size() != 3) throw FormatError("instances.csv rows need 3 fields", r + 1, "line");
    auto t = detail::parse_number<double>(f[2]);
    if (!t || !(*t > 0.0)) throw FormatError(fmt::format("bad timeout '{}'", f[2]), r + 1, "line");
    BenchmarkInstance in;
    in.model_path = base / f[0];
    in.property_path = base / f[1];
    in.timeout_seconds = *t;
    in.name = f[1];
    out.push_back(std::move(in));
  }
  return out;
}

inline std::vector<BenchmarkInstance> read_instances(const fs::path& csv) {
  return parse_instances(read_text(csv), csv.parent_path());
}

inline double total_budget(const std::vector<BenchmarkInstance>& instances) {
  double s = 0.0;
  for (const auto& in : instances) s += in.timeout_seconds;
  return s;
}

// For every model: pick `images_per_model` distinct images the model
// classifies correctly (seeded shuffle of the eligible ones), and emit one
// property per epsilon. Writes <out>/onnx/, <out>/vnnlib/ and
// <out>/instances.csv.
inline std::vector<BenchmarkInstance> generate_benchmark(const std::vector<fs::path>& models,
                                                         const std::vector<LabeledImage>& images,
                                                         const BenchmarkConfig& cfg, const fs::path& out_dir) {
  if (models.empty()) throw Error("no models given");
  for (double e : cfg.epsilons)
    if (!(e >= 0.0)) throw Error("epsilon must be non-negative");
  fs::create_directories(out_dir / "onnx");
  fs::create_directories(out_dir / "vnnlib");
  Rng rng(cfg.seed);
  std::vector<BenchmarkInstance> instances;
  std::vector<std::size_t> sizes;
  for (const auto& model_path : models) {
    const auto bytes = read_bytes(model_path);
    const Network net = onnx::parse_model(bytes);
    const std::size_t size = net.input_shape[0];
    if (std::find(sizes.begin(), sizes.end(), size) != sizes.end())
      throw Error(fmt::format("two models share input size {}; property names would collide", size));
    sizes.push_back(size);
    const fs::path model_out = out_dir / "onnx" / model_path.filename();
    write_bytes(model_out, bytes);

    const CompiledNetwork cnet(net);
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].image.shape() != net.input_shape) continue;
      if (cnet.predict(images[i].image.data()) != images[i].label) {
        log().warn("{}: image {} is misclassified; not selected", model_path.filename().string(), images[i].name);
        continue;
      }
      eligible.push_back(i);
    }
    if (eligible.size() < cfg.images_per_model)
      throw Error(fmt::format("{}: only {} correctly classified images of shape {}, need {}",
                              model_path.filename().string(), eligible.size(), shape_str(net.input_shape),
                              cfg.images_per_model));
    shuffle(eligible, rng);
    eligible.resize(cfg.images_per_model);
    for (std::size_t k : eligible) {
      const auto& img = images[k];
      for (double eps : cfg.epsilons) {
        const fs::path prop_path = out_dir / "vnnlib" / property_filename(size, img.index, eps);
        write_text(prop_path, generate_property(img.image, eps, img.label, cfg.clip, net.num_classes,
                                                PropertySource{img.index, eps}));
        instances.push_back({model_out, prop_path, cfg.timeout_seconds,
                             fs::relative(prop_path, out_dir).generic_string()});
      }
    }
  }
  write_text(out_dir / "instances.csv", render_instances(instances, out_dir));
  return instances;
}

// ---------------------------------------------------------------------------
// Running instances.

enum class Engine { Ibp, Bab, Falsify, Brute };

inline Engine parse_engine(std::string_view s) {
  if (s == "ibp") return Engine::Ibp;
  if (s == "bab") return Engine::Bab;
  if (s == "falsify") return Engine::Falsify;
  if (s == "brute") return Engine::Brute;
  throw Error(fmt::format("unknown engine '{}' (expected ibp, bab, falsify or brute)", s));
}

struct EngineConfig {
  Engine engine = Engine::Bab;
  double timeout_seconds = 480.0;
  std::uint64_t seed = 0;
  std::uint64_t max_nodes = 100'000;
  bool integer_grid = true;
};

// Dispatches one query. Brute force beyond its budget reports Unknown.
inline Verdict run_engine(const Network& net, const RobustnessProperty& prop, const EngineConfig& cfg) {
  switch (cfg.engine) {
    case Engine::Ibp: return verify_ibp(net, prop);
    case Engine::Bab: return bab_verify(net, prop, {cfg.timeout_seconds, cfg.max_nodes, cfg.integer_grid});
    case Engine::Falsify: {
      AttackConfig a;
      a.seed = cfg.seed;
      a.integer_grid = cfg.integer_grid;
      a.time_limit_seconds = cfg.timeout_seconds;
      return falsify(net, prop, a);
    }
    case Engine::Brute:
      try {
        return brute_force_verify(net, prop);
      } catch (const BudgetExceeded& e) {
        log().info("{}", e.what());
        return Verdict{};
      }
  }
  return Verdict{};
}

struct VerdictRecord {
  std::string instance;
  std::string verdict;  // unsat, sat, unknown, timeout, error
  double seconds = 0.0;
  std::string witness_path;
  bool penalty = false;  // a witness failed the independent re-check
  std::string message;
};

struct RunConfig {
  Engine engine = Engine::Bab;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
  std::uint64_t max_nodes = 100'000;
  bool integer_grid = true;
  fs::path witness_dir;  // empty: witnesses are not written
};

namespace detail {

class ModelCache {
public:
  std::shared_ptr<const Network> get(const fs::path& p) {
    std::lock_guard lock(mu_);
    auto& slot = models_[p.string()];
    if (!slot) slot = std::make_shared<const Network>(onnx::load_model(p));
    return slot;
  }

private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<const Network>> models_;
};

inline VerdictRecord run_one(const BenchmarkInstance& in, const RunConfig& cfg, ModelCache& cache) {
  Stopwatch clock;
  VerdictRecord rec;
  rec.instance = in.name.empty() ? in.property_path.generic_string() : in.name;
  try {
    const auto net = cache.get(in.model_path);
    const auto prop = load_property(in.property_path);
    check_compatible(*net, prop);
    EngineConfig ec{cfg.engine, in.timeout_seconds - clock.seconds(), cfg.seed, cfg.max_nodes, cfg.integer_grid};
    Verdict v = ec.timeout_seconds > 0.0 ? run_engine(*net, prop, ec) : Verdict{VerdictKind::Timeout, {}, {}};
    rec.verdict = verdict_string(v.kind);
    if (v.kind == VerdictKind::Falsified) {
      if (!v.witness || !check_witness(*net, prop, *v.witness)) {
        rec.verdict = "error";
        rec.penalty = true;
        rec.message = "counterexample failed the re-check";
      }
      if (v.witness && !cfg.witness_dir.empty()) {
        fs::create_directories(cfg.witness_dir);
        const fs::path wp = cfg.witness_dir / (in.property_path.stem().string() + ".counterexample");
        write_text(wp, render_witness(*v.witness));
        rec.witness_path = wp.generic_string();
      }
    }
  } catch (const std::exception& e) {
    rec.verdict = "error";
    rec.message = e.what();
  }
  rec.seconds = clock.seconds();
  if (!rec.penalty && rec.verdict != "error" && rec.seconds > in.timeout_seconds) {
    rec.verdict = "timeout";
    rec.witness_path.clear();
  }
  return rec;
}

}  // namespace detail

// Runs every instance on a pool of `jobs` workers. Records come back in
// instance order regardless of scheduling.
inline std::vector<VerdictRecord> run_instances(const std::vector<BenchmarkInstance>& instances,
                                                const RunConfig& cfg = {}) {
  std::vector<VerdictRecord> out(instances.size());
  detail::ModelCache cache;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < instances.size();) {
      out[i] = detail::run_one(instances[i], cfg, cache);
      log().info("{}: {} ({:.3f} s)", out[i].instance, out[i].verdict, out[i].seconds);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(cfg.jobs, instances.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

inline std::string render_results(const std::vector<VerdictRecord>& records) {
  std::string out = "instance,verdict,seconds,witness_path\n";
  for (const auto& r : records)
    out += fmt::format("{},{},{:.3f},{}\n", r.instance, r.verdict, r.seconds, r.witness_path);
  return out;
}

// Rows with verdict "error" that still name a witness file are rejected
// counterexamples and count as penalties.
inline std::vector<VerdictRecord> parse_results(std::string_view text) {
  std::vector<VerdictRecord> out;
  const auto rows = detail::lines(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (detail::trim(rows[r]).empty()) continue;
    auto f = detail::split(rows[r], ',');
    if (r == 0 && !f.empty() && f[0] == "instance") continue;
    if (f.size() != 4) throw FormatError("results.csv rows need 4 fields", r + 1, "line");
    static const std::vector<std::string> verdicts{"unsat", "sat", "unknown", "timeout", "error"};
    if (std::find(verdicts.begin(), verdicts.end(), f[1]) == verdicts.end())
      throw FormatError(fmt::format("unknown verdict '{}'", f[1]), r + 1, "line");
    auto s = detail::parse_number<double>(f[2]);
    if (!s) throw FormatError(fmt::format("bad seconds '{}'", f[2]), r + 1, "line");
    VerdictRecord rec;
    rec.instance = f[0];
    rec.verdict = f[1];
    rec.seconds = *s;
    rec.witness_path = f[3];
    rec.penalty = rec.verdict == "error" && !rec.witness_path.empty();
    out.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scoring.

struct ToolCounts {
  std::string tool;
  std::uint64_t verified = 0;
  std::uint64_t falsified = 0;
  std::uint64_t fastest = 0;
  std::uint64_t penalty = 0;
};

struct ScoreRow {
  std::string tool;
  std::uint64_t verified = 0;
  std::uint64_t falsified = 0;
  std::uint64_t fastest = 0;
  std::uint64_t penalty = 0;
  std::int64_t score = 0;
  double percent = 0.0;
};

inline constexpr std::int64_t kPointsCorrect = 10;
inline constexpr std::int64_t kPointsIncorrect = -150;

// score = 10 * (verified + falsified) - 150 * penalty; percent is relative to
// the best score, with negative scores shown as 0 (and all 0 if no score is positive).
inline std::vector<ScoreRow> score_results(const std::vector<ToolCounts>& tools) {
  if (tools.empty()) throw Error("no tools to score");
  std::vector<ScoreRow> rows;
  std::int64_t best = std::numeric_limits<std::int64_t>::min();
  for (const auto& t : tools) {
    ScoreRow r{t.tool, t.verified, t.falsified, t.fastest, t.penalty, 0, 0.0};
    r.score = kPointsCorrect * std::int64_t(t.verified + t.falsified) + kPointsIncorrect * std::int64_t(t.penalty);
    best = std::max(best, r.score);
    rows.push_back(std::move(r));
  }
  for (auto& r : rows) r.percent = best > 0 ? 100.0 * double(std::max<std::int64_t>(0, r.score)) / double(best) : 0.0;
  return rows;
}

inline ToolCounts counts_from_results(std::string tool, const std::vector<VerdictRecord>& records) {
  ToolCounts c;
  c.tool = std::move(tool);
  for (const auto& r : records) {
    if (r.verdict == "unsat") ++c.verified;
    if (r.verdict == "sat") ++c.falsified;
    if (r.penalty) ++c.penalty;
  }
  return c;
}

// Credits each instance's quickest correct answer (first tool on ties).
inline void credit_fastest(std::vector<ToolCounts>& tools, const std::vector<std::vector<VerdictRecord>>& runs) {
  std::map<std::string, std::pair<double, std::size_t>> best;
  for (std::size_t t = 0; t < runs.size(); ++t)
    for (const auto& r : runs[t]) {
      if (r.verdict != "sat" && r.verdict != "unsat") continue;
      auto it = best.find(r.instance);
      if (it == best.end() || r.seconds < it->second.first) best[r.instance] = {r.seconds, t};
    }
  for (const auto& [inst, b] : best) ++tools[b.second].fastest;
}

// "tool,verified,falsified,penalty[,fastest]" rows; a header line is optional.
inline std::vector<ToolCounts> parse_counts(std::string_view text) {
  std::vector<ToolCounts> out;
  const auto rows = detail::lines(text);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (detail::trim(rows[r]).empty()) continue;
    auto f = detail::split(rows[r], ',');
    if (r == 0 && !f.empty() && f[0] == "tool") continue;
    if (f.size() != 4 && f.size() != 5) throw FormatError("counts rows need 4 or 5 fields", r + 1, "line");
    ToolCounts c;
    c.tool = f[0];
    std::uint64_t* slots[] = {&c.verified, &c.falsified, &c.penalty, &c.fastest};
    for (std::size_t k = 1; k < f.size(); ++k) {
      auto v = detail::parse_number<std::uint64_t>(f[k]);
      if (!v) throw FormatError(fmt::format("bad count '{}'", f[k]), r + 1, "line");
      *slots[k - 1] = *v;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::string format_percent(double p) { return fmt::format("{:.0f}%", p); }

inline std::string render_score_table(const std::vector<ScoreRow>& rows) {
  std::size_t w = 4;
  for (const auto& r : rows) w = std::max(w, r.tool.size());
  std::string out = fmt::format("{:<{}}  {:>8}  {:>9}  {:>7}  {:>7}  {:>6}  {:>7}\n", "Tool", w, "Verified",
                                "Falsified", "Fastest", "Penalty", "Score", "Percent");
  for (const auto& r : rows)
    out += fmt::format("{:<{}}  {:>8}  {:>9}  {:>7}  {:>7}  {:>6}  {:>7}\n", r.tool, w, r.verified, r.falsified,
                       r.fastest, r.penalty, r.score, format_percent(r.percent));
  return out;
}

inline std::string render_score_csv(const std::vector<ScoreRow>& rows) {
  std::string out = "tool,verified,falsified,fastest,penalty,score,percent\n";
  for (const auto& r : rows)
    out += fmt::format("{},{},{},{},{},{},{:.2f}\n", r.tool, r.verified, r.falsified, r.fastest, r.penalty, r.score,
                       r.percent);
  return out;
}

}  // namespace bnnv
