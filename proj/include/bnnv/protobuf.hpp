#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bnnv/errors.hpp"

// Protocol-buffers wire format, enough to read and write ONNX messages.
namespace bnnv::pb {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

enum class WireType : std::uint8_t { varint = 0, fixed64 = 1, len_delimited = 2, fixed32 = 5 };

struct WireField {
  std::uint32_t field_number = 0;
  WireType wire_type = WireType::varint;
  std::uint64_t value = 0;  // varint / fixed32 / fixed64 payload
  ByteView bytes;           // len_delimited payload
  std::size_t offset = 0;   // absolute offset of the tag byte

  std::string_view str() const {
    return {reinterpret_cast<const char*>(bytes.data()), bytes.size()};
  }
  float as_float() const { return std::bit_cast<float>(static_cast<std::uint32_t>(value)); }
  double as_double() const { return std::bit_cast<double>(value); }
  std::int64_t as_int64() const { return static_cast<std::int64_t>(value); }
};

enum class VarintStatus { ok, truncated, overlong };

inline VarintStatus try_decode_varint(ByteView bytes, std::size_t offset, std::uint64_t& value,
                                      std::size_t& next) {
  value = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    if (offset + i >= bytes.size()) return VarintStatus::truncated;
    const std::uint8_t b = bytes[offset + i];
    if (i == 9 && b > 1) return VarintStatus::overlong;
    value |= std::uint64_t(b & 0x7f) << (7 * i);
    if (!(b & 0x80)) {
      next = offset + i + 1;
      return VarintStatus::ok;
    }
  }
  return VarintStatus::overlong;
}

// Little-endian base-128. Returns (value, offset just past the varint). `base`
// shifts the offset reported in errors.
inline std::pair<std::uint64_t, std::size_t> decode_varint(ByteView bytes, std::size_t offset,
                                                           std::size_t base = 0) {
  std::uint64_t value;
  std::size_t next = offset;
  switch (try_decode_varint(bytes, offset, value, next)) {
    case VarintStatus::ok: return {value, next};
    case VarintStatus::truncated: throw FormatError("truncated varint", base + offset);
    case VarintStatus::overlong: break;
  }
  throw FormatError("overlong varint (more than 10 bytes)", base + offset);
}

inline void encode_varint(std::uint64_t v, Bytes& out) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

inline Bytes encode_varint(std::uint64_t v) {
  Bytes out;
  encode_varint(v, out);
  return out;
}

// Sequential reader over one message. `base` is the message's absolute offset
// in the enclosing buffer, used for diagnostics.
class Reader {
public:
  explicit Reader(ByteView bytes, std::size_t base = 0) : bytes_(bytes), base_(base) {}

  bool next(WireField& f) {
    if (pos_ >= bytes_.size()) return false;
    f = WireField{};
    f.offset = base_ + pos_;
    auto [tag, p] = decode(pos_);
    const std::uint64_t number = tag >> 3;
    if (number == 0 || number > 0x1fffffff) throw FormatError("invalid field number", f.offset);
    f.field_number = static_cast<std::uint32_t>(number);
    switch (tag & 7) {
      case 0: {
        f.wire_type = WireType::varint;
        std::tie(f.value, p) = decode(p);
        break;
      }
      case 1:
        f.wire_type = WireType::fixed64;
        f.value = read_fixed(p, 8);
        p += 8;
        break;
      case 2: {
        f.wire_type = WireType::len_delimited;
        auto [len, q] = decode(p);
        if (len > bytes_.size() - q) throw FormatError("length-delimited field overruns message", base_ + p);
        f.bytes = bytes_.subspan(q, static_cast<std::size_t>(len));
        p = q + static_cast<std::size_t>(len);
        break;
      }
      case 5:
        f.wire_type = WireType::fixed32;
        f.value = read_fixed(p, 4);
        p += 4;
        break;
      default:
        throw FormatError(fmt::format("unsupported wire type {}", tag & 7), f.offset);
    }
    pos_ = p;
    return true;
  }

  // Absolute offset of a len-delimited payload, for nested readers.
  std::size_t absolute(const WireField& f) const {
    return base_ + static_cast<std::size_t>(f.bytes.data() - bytes_.data());
  }

private:
  std::pair<std::uint64_t, std::size_t> decode(std::size_t p) const {
    return decode_varint(bytes_, p, base_);
  }

  std::uint64_t read_fixed(std::size_t p, std::size_t n) const {
    if (bytes_.size() - p < n) throw FormatError("truncated fixed-width field", base_ + p);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= std::uint64_t(bytes_[p + i]) << (8 * i);
    return v;
  }

  ByteView bytes_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

// Repeated scalars may arrive packed (one len-delimited field) or unpacked.
inline void append_repeated_varint(const WireField& f, std::vector<std::int64_t>& out,
                                   std::size_t abs_offset) {
  if (f.wire_type == WireType::varint) {
    out.push_back(f.as_int64());
    return;
  }
  if (f.wire_type != WireType::len_delimited)
    throw FormatError("bad wire type for repeated integer", f.offset);
  std::size_t p = 0;
  while (p < f.bytes.size()) {
    auto [v, q] = decode_varint(f.bytes, p, abs_offset);
    out.push_back(static_cast<std::int64_t>(v));
    p = q;
  }
}

inline void append_repeated_float(const WireField& f, std::vector<float>& out,
                                  std::size_t abs_offset) {
  if (f.wire_type == WireType::fixed32) {
    out.push_back(f.as_float());
    return;
  }
  if (f.wire_type != WireType::len_delimited || f.bytes.size() % 4 != 0)
    throw FormatError("bad encoding for repeated float", abs_offset);
  for (std::size_t p = 0; p < f.bytes.size(); p += 4) {
    std::uint32_t u = 0;
    for (std::size_t i = 0; i < 4; ++i) u |= std::uint32_t(f.bytes[p + i]) << (8 * i);
    out.push_back(std::bit_cast<float>(u));
  }
}

class Writer {
public:
  void varint(std::uint32_t field, std::uint64_t v) {
    tag(field, WireType::varint);
    encode_varint(v, buf_);
  }
  void int64(std::uint32_t field, std::int64_t v) { varint(field, static_cast<std::uint64_t>(v)); }

  void fixed32(std::uint32_t field, std::uint32_t v) {
    tag(field, WireType::fixed32);
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void float32(std::uint32_t field, float v) { fixed32(field, std::bit_cast<std::uint32_t>(v)); }

  void bytes(std::uint32_t field, ByteView payload) {
    tag(field, WireType::len_delimited);
    encode_varint(payload.size(), buf_);
    buf_.insert(buf_.end(), payload.begin(), payload.end());
  }
  void string(std::uint32_t field, std::string_view s) {
    bytes(field, ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
  }
  void message(std::uint32_t field, const Writer& nested) { bytes(field, nested.buf_); }

  const Bytes& data() const { return buf_; }
  Bytes take() { return std::move(buf_); }

private:
  void tag(std::uint32_t field, WireType t) {
    encode_varint((std::uint64_t(field) << 3) | std::uint64_t(t), buf_);
  }

  Bytes buf_;
};

}  // namespace bnnv::pb
