#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace bnnv {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) { return fmt::format("{}", fmt::join(s, "x")); }

// Base for every structured error raised by the toolkit.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  ShapeError(std::string context, Shape expected, Shape actual,
             std::optional<std::size_t> layer = {})
      : Error(compose(context, expected, actual, layer)),
        context_(std::move(context)),
        expected_(std::move(expected)),
        actual_(std::move(actual)),
        layer_(layer) {}

  const Shape& expected() const { return expected_; }
  const Shape& actual() const { return actual_; }
  std::optional<std::size_t> layer_index() const { return layer_; }

  ShapeError at_layer(std::size_t layer) const {
    return ShapeError(context_, expected_, actual_, layer);
  }

private:
  static std::string compose(const std::string& ctx, const Shape& e, const Shape& a,
                             std::optional<std::size_t> layer) {
    std::string msg = layer ? fmt::format("layer {}: ", *layer) : std::string{};
    msg += fmt::format("{}: expected shape {}, got {}", ctx, shape_str(e), shape_str(a));
    return msg;
  }

  std::string context_;
  Shape expected_;
  Shape actual_;
  std::optional<std::size_t> layer_;
};

class InvalidModel : public Error {
public:
  using Error::Error;
};

// Malformed input bytes or text. `offset` is a byte offset (binary formats) or a
// 1-based line number (text formats) when known.
class FormatError : public Error {
public:
  explicit FormatError(const std::string& what, std::optional<std::size_t> offset = {},
                       const char* unit = "byte offset")
      : Error(offset ? fmt::format("{} (at {} {})", what, unit, *offset) : what),
        offset_(offset) {}

  std::optional<std::size_t> offset() const { return offset_; }

private:
  std::optional<std::size_t> offset_;
};

class UnsupportedOp : public FormatError {
public:
  explicit UnsupportedOp(const std::string& op)
      : FormatError(fmt::format("unsupported ONNX operator '{}'", op)), op_(op) {}
  const std::string& op() const { return op_; }

private:
  std::string op_;
};

// Raised by exhaustive engines that refuse an instance larger than their budget.
class BudgetExceeded : public Error {
public:
  using Error::Error;
};

}  // namespace bnnv
