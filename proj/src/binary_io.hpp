#pragma once

// Little-endian primitives for the graph and checkpoint formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "pmuev/errors.hpp"

namespace pmuev::detail {

template <typename U>
void write_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> buf;
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf.data(), sizeof(U));
}

template <typename U>
U read_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> buf;
  if (!in.read(reinterpret_cast<char*>(buf.data()), sizeof(U))) throw FormatError("unexpected end of stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

inline void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
inline std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
inline void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
inline std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }

inline void write_f32(std::ostream& out, float v) { write_u32(out, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_u32(in)); }
inline void write_f64(std::ostream& out, double v) { write_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

inline void write_f32_array(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
  } else {
    for (float v : values) write_f32(out, v);
  }
}

inline std::vector<float> read_f32_array(std::istream& in, std::size_t count) {
  std::vector<float> values(count);
  if constexpr (std::endian::native == std::endian::little) {
    if (!in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * 4))) {
      throw FormatError("unexpected end of stream");
    }
  } else {
    for (float& v : values) v = read_f32(in);
  }
  return values;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::size_t max_len = 1 << 20) {
  std::uint32_t len = read_u32(in);
  if (len > max_len) throw FormatError("string length out of range");
  std::string s(len, '\0');
  if (len > 0 && !in.read(s.data(), len)) throw FormatError("unexpected end of stream");
  return s;
}

}  // namespace pmuev::detail
