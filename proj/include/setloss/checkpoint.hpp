#pragma once

// SETM container: named f64 arrays.
//
//   "SETM" | version u32 | count u32 |
//   count x ( name_len u32 | name bytes | rows u32 | cols u32 | rows*cols f64 )
//
// All integers and floats little-endian.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "setloss/matrix.hpp"

namespace setloss {

inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedArrays = std::vector<std::pair<std::string, Matrix>>;

/// Raised for malformed or missing data files.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 8);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void read_exact(std::istream& in, char* dst, std::size_t n, const std::string& what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw DataError(what + ": truncated file");
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& in, const std::string& what) {
  unsigned char b[8];
  read_exact(in, reinterpret_cast<char*>(b), 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in, const std::string& what) {
  return std::bit_cast<double>(get_u64(in, what));
}
inline float get_f32(std::istream& in, const std::string& what) {
  return std::bit_cast<float>(get_u32(in, what));
}

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
  char got[4];
  read_exact(in, got, 4, what);
  if (std::string(got, 4) != std::string(magic, 4)) {
    throw DataError(what + ": bad magic, expected " + std::string(magic, 4));
  }
}

}  // namespace io

inline void write_checkpoint(std::ostream& out, const NamedArrays& arrays) {
  out.write("SETM", 4);
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) {
    io::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    io::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    io::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (double v : m.values()) io::put_f64(out, v);
  }
}

inline NamedArrays read_checkpoint(std::istream& in) {
  const std::string what = "SETM";
  io::expect_magic(in, "SETM", what);
  const std::uint32_t version = io::get_u32(in, what);
  if (version != kCheckpointVersion) {
    throw DataError("SETM: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = io::get_u32(in, what);
  NamedArrays arrays;
  for (std::uint32_t a = 0; a < count; ++a) {
    std::string name(io::get_u32(in, what), '\0');
    io::read_exact(in, name.data(), name.size(), what);
    const std::uint32_t rows = io::get_u32(in, what);
    const std::uint32_t cols = io::get_u32(in, what);
    Matrix m(rows, cols);
    for (double& v : m.values()) v = io::get_f64(in, what);
    arrays.emplace_back(std::move(name), std::move(m));
  }
  return arrays;
}

inline void save_checkpoint(const std::filesystem::path& path, const NamedArrays& arrays) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_checkpoint(out, arrays);
  if (!out) throw DataError("write failed: " + path.string());
}

inline NamedArrays load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_checkpoint(in);
}

inline const Matrix& find_array(const NamedArrays& arrays, const std::string& name) {
  for (const auto& [n, m] : arrays)
    if (n == name) return m;
  throw DataError("checkpoint has no array named '" + name + "'");
}

}  // namespace setloss
