#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bnnv/io.hpp"
#include "bnnv/tensor.hpp"

namespace bnnv {

// Binary PPM (P6) with maxval 255. Header fields are separated by whitespace
// and may be interleaved with '#' comments; one whitespace byte precedes the
// raster.
inline Tensor load_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip();
    const std::size_t start = pos;
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > 1'000'000) throw FormatError(fmt::format("PPM {} too large", what), start);
    }
    if (pos == start) throw FormatError(fmt::format("PPM header: expected {}", what), start);
    return std::size_t(v);
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw FormatError("not a binary PPM (missing 'P6' magic)", 0);
  pos = 2;
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw FormatError("PPM has zero width or height", pos);
  if (maxval != 255) throw FormatError(fmt::format("PPM maxval {} is not 255", maxval), pos);
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw FormatError("PPM header must end with one whitespace byte", pos);
  ++pos;
  const std::size_t need = width * height * 3;
  if (bytes.size() - pos < need)
    throw FormatError(fmt::format("truncated PPM raster: expected {} bytes, found {}", need, bytes.size() - pos),
                      bytes.size());
  Tensor t({height, width, 3});
  for (std::size_t i = 0; i < need; ++i) t[i] = bytes[pos + i];
  return t;
}

inline std::vector<std::uint8_t> write_ppm(const Tensor& t) {
  if (t.rank() != 3 || t.shape()[2] != 3) throw ShapeError("PPM image", {0, 0, 3}, t.shape());
  const std::string header = fmt::format("P6\n{} {}\n255\n", t.shape()[1], t.shape()[0]);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + t.size());
  for (double v : t.data()) {
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
      throw Error(fmt::format("pixel value {} is not an integer in [0, 255]", v));
    out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

inline Tensor read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  try {
    return load_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

inline void save_ppm(const Tensor& t, const std::filesystem::path& path) {
  write_bytes(path, write_ppm(t));
}

}  // namespace bnnv
