#pragma once

// Synthetic stand-ins for trained models and labeled image sets.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "bnnv/architectures.hpp"
#include "bnnv/bench.hpp"
#include "bnnv/compiled.hpp"
#include "bnnv/ppm.hpp"
#include "bnnv/random.hpp"

namespace bnnv {

// Uniform random pixels in [0, 255], labeled with the model's own prediction,
// so every image counts as correctly classified. Indices start at `first_index`.
inline std::vector<LabeledImage> synth_images(const Network& net, std::size_t count, std::uint64_t seed,
                                              std::uint64_t first_index = 0) {
  const CompiledNetwork cnet(net);
  Rng rng(seed);
  std::vector<LabeledImage> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    LabeledImage li;
    li.image = Tensor(net.input_shape);
    for (auto& v : li.image.data()) v = double(uniform_int(rng, 0, 255));
    li.label = cnet.predict(li.image.data());
    li.index = first_index + k;
    li.name = fmt::format("{:05}.ppm", li.index);
    out.push_back(std::move(li));
  }
  return out;
}

// Writes <dir>/<name> for every image plus a labels.csv readable by load_image_dir.
// Rows already in dir/labels.csv are kept unless the same file is rewritten.
inline void save_image_dir(const std::vector<LabeledImage>& images, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> rows;
  if (const auto existing = dir / "labels.csv"; std::filesystem::exists(existing)) {
    const auto lines = detail::lines(read_text(existing));
    for (std::size_t r = 1; r < lines.size(); ++r)
      if (auto comma = lines[r].find(','); comma != std::string::npos)
        rows[lines[r].substr(0, comma)] = lines[r].substr(comma + 1);
  }
  for (const auto& li : images) {
    save_ppm(li.image, dir / li.name);
    rows[li.name] = std::to_string(li.label);
  }
  std::string labels = "filename,label\n";
  for (const auto& [name, label] : rows) labels += fmt::format("{},{}\n", name, label);
  write_text(dir / "labels.csv", labels);
}

}  // namespace bnnv
